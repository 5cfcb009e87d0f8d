import html
import re

_TAG = re.compile(r"<[^>]*>")
_URL = re.compile(r"https?://\S+")
_SPACE = re.compile(r"\s+")


def clean_text(raw: str) -> str:
    """Unescape HTML entities, drop tags and URLs, normalize whitespace."""
    text = html.unescape(raw)
    text = _TAG.sub(" ", text)
    text = _URL.sub(" ", text)
    return _SPACE.sub(" ", text).strip()
