"""PHP ``parse_str`` semantics for urlencoded bodies.

A decoded body is a FormTree: ``str`` leaves, ``dict`` maps and ``list``
lists. The behaviour is pinned to PHP 8.2; ``tests/golden/parse_str.json``
holds the reference outputs.
"""
import logging
import re
from urllib.parse import unquote_to_bytes

from constants import INT64_MAX, INT64_MIN, MAX_INPUT_NESTING, MAX_INPUT_VARS

logger = logging.getLogger(__name__)

APPEND = None
_CANONICAL_INT = re.compile(r'^(0|-?[1-9][0-9]*)$')


class DecodeError(ValueError):
    pass


class KeyPath(object):
    """root[s1][s2]...; a segment is its text, or APPEND for ``[]``."""

    def __init__(self, root: str, segments: list = None):
        self.root = root
        self.segments = segments or []

    def __eq__(self, other):
        return isinstance(other, KeyPath) and (self.root, self.segments) == (other.root, other.segments)

    def __repr__(self):
        segs = ''.join('[]' if s is APPEND else f'[{s}]' for s in self.segments)
        return f'KeyPath({self.root!r}{segs})'


def _mangle(name: str) -> str:
    return name.replace(' ', '_').replace('.', '_')


def parse_key_path(raw_key: str) -> KeyPath:
    if raw_key == '':
        raise DecodeError('empty key')
    key = raw_key.lstrip(' ')
    bracket = key.find('[')
    if bracket == -1:
        root, rest = _mangle(key), ''
    else:
        root, rest = _mangle(key[:bracket]), key[bracket:]
    if root == '':
        raise DecodeError(f'no variable name in {raw_key!r}')

    segments = []
    while rest.startswith('['):
        body = rest[1:]
        if body.startswith(' ]') or body.startswith(']'):
            close = body.index(']')
            segments.append(APPEND)
        else:
            close = body.find(']')
            if close == -1:
                if not segments:
                    # unclosed first bracket: the rest joins the root name
                    tail = body.replace(' ', '_').replace('.', '_').replace('[', '_')
                    return KeyPath(root + '_' + tail)
                break
            segments.append(body[:close])
        rest = body[close + 1:]
    return KeyPath(root, segments)


def _url_decode(raw: bytes) -> str:
    return unquote_to_bytes(raw.replace(b'+', b' ')).decode('utf-8', errors='replace')


def _integer_key(k: str):
    """PHP treats a key as an integer only when it is canonical and fits in 64 bits."""
    if len(k) > 20 or not _CANONICAL_INT.match(k):
        return None
    i = int(k)
    return i if INT64_MIN <= i <= INT64_MAX else None


def _next_index(node: dict):
    """None when the next slot would overflow; PHP drops that element."""
    ints = [i for i in map(_integer_key, node) if i is not None and i >= 0]
    if not ints:
        return '0'
    return None if max(ints) == INT64_MAX else str(max(ints) + 1)


def _as_map(node: list) -> dict:
    return {str(i): v for i, v in enumerate(node)}


def _get(container, key):
    if isinstance(container, list):
        return container[key]
    return container.get(key)


def _insert(tree: dict, path: KeyPath, value: str):
    if len(path.segments) > MAX_INPUT_NESTING:
        # too deep: the whole variable is dropped
        tree.pop(path.root, None)
        return

    parent, key = tree, path.root
    for segment in path.segments:
        node = _get(parent, key)
        if not isinstance(node, (dict, list)):
            node = [] if segment is APPEND else {}
            parent[key] = node
        elif isinstance(node, list) and segment is not APPEND:
            node = _as_map(node)
            parent[key] = node

        if segment is not APPEND:
            parent, key = node, segment
        elif isinstance(node, list):
            node.append(None)
            parent, key = node, len(node) - 1
        else:
            parent, key = node, _next_index(node)
            if key is None:
                return
    parent[key] = value


def decode_form(body) -> dict:
    """Decode ``k=v&k=v`` into a FormTree map. Never raises."""
    if isinstance(body, str):
        body = body.encode('utf-8', errors='surrogatepass')
    tree = {}
    count = 0
    for pair in body.split(b'&'):
        if not pair:
            continue
        count += 1
        if count > MAX_INPUT_VARS:
            logger.warning('form body has more than %d variables; ignoring the rest', MAX_INPUT_VARS)
            break
        raw_key, sep, raw_val = pair.partition(b'=')
        try:
            path = parse_key_path(_url_decode(raw_key))
        except DecodeError:
            continue
        _insert(tree, path, _url_decode(raw_val))
    return tree


def form_to_value(tree):
    """FormTree to document Value, structure for structure. No validation on purpose."""
    if isinstance(tree, dict):
        return {k: form_to_value(v) for k, v in tree.items()}
    if isinstance(tree, list):
        return [form_to_value(v) for v in tree]
    return str(tree)
