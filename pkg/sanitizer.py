"""Mitigations applied by the hardened endpoints.

Each check either returns its input (or a boolean) or raises SanitizeError
whose kind says which mitigation fired.
"""
import logging
from enum import Enum

from constants import JSON_CONTENT_TYPE, Role
from document_store import canonical_json, is_number

logger = logging.getLogger(__name__)


class SanitizeErrorKind(Enum):
    NOT_SCALAR = 'NotScalar'
    OPERATOR_KEY = 'OperatorKey'
    FIELD_NOT_ALLOWED = 'FieldNotAllowed'
    BAD_CONTENT_TYPE = 'BadContentType'
    FORBIDDEN = 'Forbidden'


class SanitizeError(ValueError):

    def __init__(self, kind: SanitizeErrorKind, detail: str):
        super().__init__(f'{kind.value}: {detail}')
        self.kind = kind
        self.detail = detail


def cast_scalar_text(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, bool):
        return 'true' if v else 'false'
    if is_number(v):
        return canonical_json(v)
    kind = 'null' if v is None else type(v).__name__
    raise SanitizeError(SanitizeErrorKind.NOT_SCALAR, f'expected a scalar, got {kind}')


def reject_operator_keys(v):
    """Return v untouched unless some object key starts with '$'."""
    stack = [(None, v)]
    while stack:
        key, node = stack.pop()
        if key is not None and key.startswith('$'):
            raise SanitizeError(SanitizeErrorKind.OPERATOR_KEY, key)
        if isinstance(node, dict):
            stack.extend(reversed(list(node.items())))
        elif isinstance(node, list):
            stack.extend((None, item) for item in reversed(node))
    return v


def escape_string_literal(s: str) -> str:
    return s.replace('\\', '\\\\').replace("'", "\\'")


def check_field_allowlist(field: str, allowed) -> bool:
    return field in allowed


def enforce_json_content_type(content_type_header) -> bool:
    if not content_type_header:
        return False
    media_type = content_type_header.split(';', 1)[0].strip().lower()
    return media_type == JSON_CONTENT_TYPE


def parse_role(text: str) -> Role:
    try:
        return Role(text)
    except ValueError:
        raise SanitizeError(SanitizeErrorKind.FORBIDDEN, f'unknown role {text!r}')


def rbac_check(session_role: Role, required_role: Role) -> bool:
    return session_role is Role.ADMIN or required_role is Role.USER
