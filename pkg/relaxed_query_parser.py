"""Shell-style query text: unquoted keys, '$' keys, single-quoted strings.

Strict JSON is a sublanguage, so canonical JSON output always parses back.
"""
import logging
import re

from constants import MAX_PARSE_DEPTH

logger = logging.getLogger(__name__)

_IDENT = re.compile(r'[$A-Za-z_][$A-Za-z0-9_]*')
_NUMBER = re.compile(r'[-+]?[0-9]+(\.[0-9]+)?([eE][-+]?[0-9]+)?')
_JSON_ESCAPES = {'"': '"', '\\': '\\', '/': '/', 'b': '\b', 'f': '\f', 'n': '\n', 'r': '\r', 't': '\t'}
_KEYWORDS = {'true': True, 'false': False, 'null': None}


class RelaxedParseError(ValueError):

    def __init__(self, message: str, offset: int):
        super().__init__(f'{message} at offset {offset}')
        self.message = message
        self.offset = offset


class _Parser(object):

    def __init__(self, source: str):
        self.src = source
        self.pos = 0
        self.depth = 0

    def error(self, message: str, offset: int = None):
        offset = self.pos if offset is None else offset
        return RelaxedParseError(message, min(max(offset, 0), len(self.src)))

    def skip_ws(self):
        while self.pos < len(self.src) and self.src[self.pos] in ' \t\r\n':
            self.pos += 1

    def peek(self) -> str:
        self.skip_ws()
        return self.src[self.pos] if self.pos < len(self.src) else ''

    def expect(self, ch: str):
        if self.peek() != ch:
            found = self.peek() or 'end of input'
            raise self.error(f'expected {ch!r}, found {found!r}')
        self.pos += 1

    def parse(self):
        value = self.value()
        self.skip_ws()
        if self.pos != len(self.src):
            raise self.error('trailing characters after the query')
        return value

    def value(self):
        ch = self.peek()
        if ch == '{':
            return self.nested(self.obj)
        if ch == '[':
            return self.nested(self.array)
        if ch in ('"', "'"):
            return self.string()
        if ch == '':
            raise self.error('unexpected end of input')
        m = _NUMBER.match(self.src, self.pos)
        if m:
            text = m.group(0)
            try:
                number = float(text) if m.group(1) or m.group(2) else int(text)
            except ValueError:
                raise self.error('number literal too long')
            self.pos = m.end()
            return number
        m = _IDENT.match(self.src, self.pos)
        if m and m.group(0) in _KEYWORDS:
            self.pos = m.end()
            return _KEYWORDS[m.group(0)]
        raise self.error(f'unexpected character {ch!r}')

    def nested(self, parse_fn):
        self.depth += 1
        if self.depth > MAX_PARSE_DEPTH:
            raise self.error('query nested too deeply')
        result = parse_fn()
        self.depth -= 1
        return result

    def obj(self) -> dict:
        self.expect('{')
        result = {}
        if self.peek() == '}':
            self.pos += 1
            return result
        while True:
            key = self.key()
            self.expect(':')
            result[key] = self.value()
            if self.peek() == ',':
                self.pos += 1
                continue
            self.expect('}')
            return result

    def array(self) -> list:
        self.expect('[')
        result = []
        if self.peek() == ']':
            self.pos += 1
            return result
        while True:
            result.append(self.value())
            if self.peek() == ',':
                self.pos += 1
                continue
            self.expect(']')
            return result

    def key(self) -> str:
        ch = self.peek()
        if ch in ('"', "'"):
            return self.string()
        m = _IDENT.match(self.src, self.pos)
        if not m:
            raise self.error(f'expected a key, found {ch or "end of input"!r}')
        self.pos = m.end()
        return m.group(0)

    def string(self) -> str:
        start = self.pos
        quote = self.src[self.pos]
        self.pos += 1
        out = []
        while True:
            if self.pos >= len(self.src):
                raise self.error('unterminated string literal', start)
            ch = self.src[self.pos]
            if ch == quote:
                self.pos += 1
                return ''.join(out)
            if ch == '\\' and self.pos + 1 < len(self.src):
                nxt = self.src[self.pos + 1]
                if quote == "'":
                    if nxt in ("'", '\\'):
                        out.append(nxt)
                        self.pos += 2
                        continue
                elif nxt == 'u':
                    digits = self.src[self.pos + 2:self.pos + 6]
                    if len(digits) == 4 and all(c in '0123456789abcdefABCDEF' for c in digits):
                        out.append(chr(int(digits, 16)))
                        self.pos += 6
                        continue
                elif nxt in _JSON_ESCAPES:
                    out.append(_JSON_ESCAPES[nxt])
                    self.pos += 2
                    continue
            out.append(ch)
            self.pos += 1


def parse_relaxed(source: str):
    return _Parser(source).parse()


def build_concat_login_query(username_raw: str, password_raw: str) -> str:
    # The flawed builder: user input pasted between quotes, no encoding.
    return "{ username: '" + username_raw + "', password: '" + password_raw + "' }"
