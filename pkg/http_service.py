"""The target service: vulnerable endpoints, their hardened twins and the REST insert API.

DELIBERATELY VULNERABLE. Bind to localhost or an isolated network only.
"""
import logging
import threading
from string import Template

from flask import Flask, jsonify, request
from werkzeug.exceptions import HTTPException
from werkzeug.serving import WSGIRequestHandler, make_server

import document_store
import script_engine
from constants import (ALLOWED_FIELDS, DATA, EXECUTE_TEMPLATE, FORM_CONTENT_TYPE, LOGINS, MAP_TEMPLATE,
                       MAX_BODY_BYTES, MITIGATIONS, OPT_TEMPLATE, REDUCE_TEMPLATE, REQUEST_TIMEOUT, TOTALS,
                       RestMode, Role)
from datasets import FixtureSet
from form_decoder import decode_form, form_to_value
from relaxed_query_parser import RelaxedParseError, build_concat_login_query, parse_relaxed
from sanitizer import (SanitizeError, cast_scalar_text, check_field_allowlist, enforce_json_content_type,
                       escape_string_literal, parse_role, rbac_check, reject_operator_keys)

logger = logging.getLogger(__name__)

VARIANTS = ('vuln', 'safe')


def seed_fixtures(store: document_store.Store, fixtures: FixtureSet = None) -> document_store.Store:
    return (fixtures or FixtureSet()).load_into(store)


def _reply(status_code: int, status: str, **fields):
    body = {'status': status}
    body.update(fields)
    return jsonify(body), status_code


def _form_value() -> dict:
    return form_to_value(decode_form(request.get_data()))


def _field_text(v) -> str:
    if v is None:
        return ''
    if isinstance(v, str):
        return v
    return document_store.canonical_json(v)


def _required_role(doc: dict) -> Role:
    try:
        return Role(doc.get('required_role'))
    except (ValueError, TypeError):
        return Role.ADMIN


def create_app(store: document_store.Store = None, rest_mode: RestMode = RestMode.OPEN,
               enable_state: bool = False, disabled_mitigations=(), step_budget: int = None,
               max_body_bytes: int = MAX_BODY_BYTES) -> Flask:
    """Build the lab app. ``disabled_mitigations`` switches hardened checks off for mutation tests."""
    unknown = set(disabled_mitigations) - MITIGATIONS
    if unknown:
        raise ValueError(f'unknown mitigations: {", ".join(sorted(unknown))}')
    if store is None:
        store = seed_fixtures(document_store.Store())
    rest_mode = RestMode(rest_mode)

    def active(mitigation: str) -> bool:
        return mitigation not in disabled_mitigations

    app = Flask(__name__)
    app.config['MAX_CONTENT_LENGTH'] = max_body_bytes
    app.json.sort_keys = False
    app.extensions['nosqli_store'] = store

    @app.errorhandler(HTTPException)
    def http_error(e):
        return _reply(e.code, e.name.lower().replace(' ', '_'))

    @app.errorhandler(Exception)
    def unexpected_error(e):
        logger.exception('unhandled error on %s %s', request.method, request.path)
        return _reply(500, 'error')

    @app.get('/')
    def index():
        routes = sorted({rule.rule for rule in app.url_map.iter_rules() if rule.endpoint != 'static'})
        return _reply(200, 'ok', service='nosqli-lab', rest_mode=rest_mode.value,
                      state_endpoint=enable_state, routes=routes)

    @app.post('/<any(vuln, safe):variant>/login-array')
    def login_array(variant):
        value = _form_value()
        username, password = value.get('username'), value.get('password')
        if variant == 'safe' and active('cast'):
            try:
                username, password = cast_scalar_text(username), cast_scalar_text(password)
            except SanitizeError as e:
                logger.info('login-array rejected input: %s', e)
                return _reply(400, 'bad_input', detail=str(e))
        try:
            matches = document_store.find(store, LOGINS, {'username': username, 'password': password})
        except document_store.QueryError as e:
            return _reply(400, 'bad_query', detail=str(e))
        logger.info('%s/login-array matched %d logins', variant, len(matches))
        if not matches:
            return _reply(401, 'denied')
        return _reply(200, 'ok', user=matches[0].get('username'))

    @app.post('/<any(vuln, safe):variant>/login-concat')
    def login_concat(variant):
        value = _form_value()
        username, password = _field_text(value.get('username')), _field_text(value.get('password'))
        if variant == 'safe' and active('escape'):
            username, password = escape_string_literal(username), escape_string_literal(password)
        source = build_concat_login_query(username, password)
        try:
            query = parse_relaxed(source)
            matches = document_store.find(store, LOGINS, query)
        except (RelaxedParseError, document_store.QueryError, RecursionError) as e:
            logger.info('%s/login-concat bad query: %s', variant, e)
            return _reply(400, 'bad_query', detail=str(e))
        logger.info('%s/login-concat matched %d logins', variant, len(matches))
        if not matches:
            return _reply(401, 'denied')
        return _reply(200, 'ok', user=matches[0].get('username'))

    @app.post('/<any(vuln, safe):variant>/mapreduce')
    def mapreduce(variant):
        field = _form_value().get('field')
        if field is None:
            field = request.args.get('field')
        if field is None:
            return _reply(400, 'bad_input', detail='missing field')
        field = _field_text(field)
        if variant == 'safe' and active('allowlist') and not check_field_allowlist(field, ALLOWED_FIELDS):
            logger.info('safe/mapreduce rejected field %r', field[:40])
            return _reply(400, 'field_not_allowed')
        map_src = Template(MAP_TEMPLATE).substitute(param=field)
        source = Template(EXECUTE_TEMPLATE).substitute(map=map_src, reduce=REDUCE_TEMPLATE, opt=OPT_TEMPLATE)
        try:
            outcome = script_engine.exec_top_level(source, store, step_budget=step_budget)
        except script_engine.ScriptError as e:
            logger.info('%s/mapreduce script rejected: %s', variant, e)
            return _reply(500, 'script_error', detail=str(e))
        if not outcome.completed:
            return _reply(500, 'script_error', detail=outcome.error)
        if outcome.side_effects:
            logger.info('%s/mapreduce script wrote %s', variant, outcome.side_effects)
        return _reply(200, 'ok', out=TOTALS)

    @app.post('/rest/<collection>')
    def rest_insert(collection):
        raw = request.get_data()
        json_only = rest_mode is RestMode.JSON_ONLY
        if json_only and active('content_type') and not enforce_json_content_type(request.headers.get('Content-Type')):
            return _reply(415, 'unsupported_media_type')
        try:
            doc = document_store.parse_json(raw.decode('utf-8'))
        except (ValueError, RecursionError):
            if request.mimetype != FORM_CONTENT_TYPE:
                return _reply(400, 'bad_json')
            doc = form_to_value(decode_form(raw))
        if json_only and active('operator_keys'):
            try:
                reject_operator_keys(doc)
            except SanitizeError as e:
                return _reply(400, 'operator_key', detail=e.detail)
        try:
            doc_id = document_store.insert(store, collection, doc)
        except (document_store.DocumentError, RecursionError) as e:
            return _reply(400, 'bad_document', detail=str(e))
        logger.info('rest insert into %s (%s mode) _id=%s', collection, rest_mode.value, doc_id)
        return _reply(201, 'created', _id=doc_id)

    def list_data(variant):
        role = Role.USER
        if variant == 'safe':
            try:
                role = parse_role(request.headers.get('X-Role', Role.USER.value))
            except SanitizeError:
                return _reply(400, 'bad_role')
        filters = dict(request.args.items())
        if variant == 'safe' and active('operator_keys'):
            try:
                reject_operator_keys(filters)
            except SanitizeError as e:
                return _reply(400, 'operator_key', detail=e.detail)
        try:
            docs = document_store.find(store, DATA, filters)
        except document_store.QueryError as e:
            return _reply(400, 'bad_query', detail=str(e))
        if variant == 'safe' and active('rbac'):
            docs = [d for d in docs if rbac_check(role, _required_role(d))]
        return _reply(200, 'ok', docs=docs)

    app.add_url_rule('/safe/data', 'safe_data', lambda: list_data('safe'))
    app.add_url_rule('/vuln/data', 'vuln_data', lambda: list_data('vuln'))

    @app.get('/__state/<collection>')
    def state(collection):
        if not enable_state:
            return _reply(404, 'not_found')
        return jsonify(document_store.find(store, collection, {})), 200

    return app


class _TimeoutRequestHandler(WSGIRequestHandler):
    timeout = REQUEST_TIMEOUT


def make_lab_server(app: Flask, host: str, port: int, request_timeout: float = REQUEST_TIMEOUT):
    handler = type('LabRequestHandler', (_TimeoutRequestHandler,), {'timeout': request_timeout})
    return make_server(host, port, app, threaded=True, request_handler=handler)


class LabServer(object):
    """A lab app served from a daemon thread."""

    def __init__(self, app: Flask, host: str = '127.0.0.1', port: int = 0,
                 request_timeout: float = REQUEST_TIMEOUT):
        self.server = make_lab_server(app, host, port, request_timeout)
        self.host = host
        self.port = self.server.server_port
        self.base_url = f'http://{host}:{self.port}'
        self.thread = threading.Thread(target=self.server.serve_forever, name=f'lab-{self.port}', daemon=True)

    def start(self):
        self.thread.start()
        logger.info('lab serving on %s', self.base_url)
        return self

    def shutdown(self):
        self.server.shutdown()
        self.server.server_close()
        self.thread.join()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()


def serve_in_background(app: Flask, host: str = '127.0.0.1', port: int = 0,
                        request_timeout: float = REQUEST_TIMEOUT) -> LabServer:
    return LabServer(app, host, port, request_timeout).start()
