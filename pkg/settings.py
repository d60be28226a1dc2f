import copy
import logging
import os

import jsonschema
import toml

from constants import MAX_BODY_BYTES, REQUEST_TIMEOUT, STEP_BUDGET

logger = logging.getLogger(__name__)

SETTINGS_ENV = 'NOSQLI_LAB_SETTINGS'
DEFAULT_PATH = 'lab.toml'

DEFAULTS = {
    'service': {
        'host': '127.0.0.1',
        'port': 8080,
        'rest_mode': 'open',
        'enable_state_endpoint': False,
        'max_body_bytes': MAX_BODY_BYTES,
        'request_timeout': REQUEST_TIMEOUT,
    },
    'script': {
        'step_budget': STEP_BUDGET,
    },
    'scanner': {
        'workers': 4,
        'probe_timeout': REQUEST_TIMEOUT,
    },
    'logging': {
        'level': 'WARNING',
    },
}


_NUMBER = {'type': 'number', 'exclusiveMinimum': 0}
_POSITIVE_INT = {'type': 'integer', 'minimum': 1}

SETTINGS_SCHEMA = {
    'type': 'object',
    'properties': {
        'service': {
            'type': 'object',
            'properties': {
                'host': {'type': 'string', 'minLength': 1},
                'port': {'type': 'integer', 'minimum': 0, 'maximum': 65535},
                'rest_mode': {'enum': ['open', 'json-only']},
                'enable_state_endpoint': {'type': 'boolean'},
                'max_body_bytes': _POSITIVE_INT,
                'request_timeout': _NUMBER,
            },
        },
        'script': {'type': 'object', 'properties': {'step_budget': _POSITIVE_INT}},
        'scanner': {'type': 'object', 'properties': {'workers': _POSITIVE_INT, 'probe_timeout': _NUMBER}},
        'logging': {
            'type': 'object',
            'properties': {'level': {'enum': ['DEBUG', 'INFO', 'WARNING', 'ERROR',
                                              'debug', 'info', 'warning', 'error']}},
        },
    },
}


class SettingsError(ValueError):
    pass


def _merge(base: dict, override: dict) -> dict:
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(base.get(key), dict):
            _merge(base[key], val)
        else:
            base[key] = val
    return base


def load_settings(path: str = None) -> dict:
    """Defaults overlaid with the TOML settings file, if one exists.

    Lookup order: explicit path, $NOSQLI_LAB_SETTINGS, ./lab.toml.
    Raises SettingsError for unreadable, malformed or wrongly typed settings.
    """
    settings = copy.deepcopy(DEFAULTS)
    path = path or os.environ.get(SETTINGS_ENV) or DEFAULT_PATH
    if os.path.exists(path):
        logger.debug('loading settings from %s', path)
        try:
            _merge(settings, toml.load(path))
        except OSError as e:
            raise SettingsError(f'cannot read {path}: {e.strerror}')
        except ValueError as e:
            raise SettingsError(f'{path} is not valid TOML: {e}')
    try:
        jsonschema.validate(settings, SETTINGS_SCHEMA)
    except jsonschema.ValidationError as e:
        where = '.'.join(str(p) for p in e.absolute_path) or 'settings'
        raise SettingsError(f'{path}: {where}: {e.message}')
    return settings
