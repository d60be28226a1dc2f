"""Differential DAST scanner for the four NoSQL injection classes.

For every endpoint the scanner records failure baselines first, then sends
each catalog payload and compares status classes against the baselines.
"""
import hashlib
import json
import logging
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from string import Template
from typing import Optional
from urllib.parse import quote

import jsonschema
import requests

import api
from constants import (CSRF_FIELD, FORM_CONTENT_TYPE, JS_PAYLOAD_AS_PRINTED, JS_PAYLOAD_BALANCED, JSON_CONTENT_TYPE,
                       MALFORMED_VALUE, OR_PASSWORD, OR_USERNAME_SUFFIX, REQUEST_TIMEOUT, AttackClass)

logger = logging.getLogger(__name__)

KINDS = ('login', 'script', 'insert')
CLASSES_BY_KIND = {
    'login': (AttackClass.ARRAY_INJECTION, AttackClass.OR_INJECTION),
    'script': (AttackClass.JS_INJECTION,),
    'insert': (AttackClass.CSRF_PROBE,),
}

CONFIG_SCHEMA = {
    'type': 'object',
    'required': ['base_url', 'endpoints'],
    'additionalProperties': False,
    'properties': {
        'base_url': {'type': 'string', 'pattern': '^https?://'},
        'endpoints': {
            'type': 'array',
            'minItems': 1,
            'items': {
                'type': 'object',
                'required': ['path', 'params'],
                'additionalProperties': False,
                'properties': {
                    'path': {'type': 'string', 'pattern': '^/'},
                    'method': {'enum': ['POST']},
                    'params': {'type': 'array', 'items': {'type': 'string', 'minLength': 1}},
                    'bad_credentials': {'type': 'object', 'additionalProperties': {'type': 'string'}},
                    'known_username': {'type': 'string'},
                    'enable_post_checks': {'type': 'boolean'},
                    'kind': {'enum': list(KINDS)},
                },
            },
        },
    },
}


class ScannerError(Exception):
    pass


class ConfigError(ScannerError):
    pass


class ProbeError(ScannerError):
    pass


class ScanError(ScannerError):
    pass


@dataclass(frozen=True)
class EndpointSpec:
    path: str
    params: tuple = ()
    method: str = 'POST'
    bad_credentials: dict = field(default_factory=dict, hash=False)
    known_username: Optional[str] = None
    enable_post_checks: bool = False
    kind: Optional[str] = None

    @property
    def resolved_kind(self) -> str:
        if self.kind:
            return self.kind
        if self.bad_credentials and len(self.params) == 2:
            return 'login'
        if len(self.params) == 1:
            return 'script'
        return 'insert'


@dataclass
class TargetConfig:
    base_url: str
    endpoints: list

    @classmethod
    def from_dict(cls, raw: dict) -> 'TargetConfig':
        try:
            jsonschema.validate(raw, CONFIG_SCHEMA)
        except jsonschema.ValidationError as e:
            raise ConfigError(f'invalid target config: {e.message}')
        endpoints = []
        for ep in raw['endpoints']:
            spec = EndpointSpec(path=ep['path'], params=tuple(ep['params']), method=ep.get('method', 'POST'),
                                bad_credentials=dict(ep.get('bad_credentials', {})),
                                known_username=ep.get('known_username'),
                                enable_post_checks=ep.get('enable_post_checks', False), kind=ep.get('kind'))
            if spec.resolved_kind == 'login':
                if len(spec.params) != 2 or set(spec.bad_credentials) != set(spec.params):
                    raise ConfigError(f'{spec.path}: login endpoints need two params and bad credentials for both')
            elif spec.resolved_kind == 'script' and len(spec.params) != 1:
                raise ConfigError(f'{spec.path}: script endpoints take exactly one param')
            endpoints.append(spec)
        return cls(base_url=raw['base_url'].rstrip('/'), endpoints=endpoints)


def load_target_config(path: str) -> TargetConfig:
    try:
        with open(path, encoding='utf-8') as f:
            raw = json.load(f)
    except OSError as e:
        raise ConfigError(f'cannot read {path}: {e.strerror}')
    except ValueError as e:
        raise ConfigError(f'{path} is not JSON: {e}')
    return TargetConfig.from_dict(raw)


def lab_target_config(base_url: str, hardened: bool = False) -> TargetConfig:
    prefix = '/safe' if hardened else '/vuln'
    bad = {'username': 'nobody', 'password': 'wrong-password'}
    return TargetConfig(base_url=base_url.rstrip('/'), endpoints=[
        EndpointSpec(f'{prefix}/login-array', ('username', 'password'), bad_credentials=bad,
                     known_username='tolkien', kind='login'),
        EndpointSpec(f'{prefix}/login-concat', ('username', 'password'), bad_credentials=bad,
                     known_username='tolkien', kind='login'),
        EndpointSpec(f'{prefix}/mapreduce', ('field',), bad_credentials={'field': 'nosuchfield'},
                     enable_post_checks=True, kind='script'),
        EndpointSpec('/rest/probe', (CSRF_FIELD,), kind='insert'),
    ])


@dataclass(frozen=True)
class Payload:
    attack_class: Optional[AttackClass]
    name: str
    method: str
    content_type: Optional[str]
    body: bytes
    notes: str = ''


@dataclass(frozen=True)
class Observation:
    status: int
    body_digest: str
    latency: float


@dataclass(frozen=True)
class Finding:
    attack_class: AttackClass
    endpoint: str
    payload_name: str
    baseline: Observation
    attack: Observation
    severity: str = 'high'
    confidence: str = 'high'


@dataclass
class Report:
    target: str
    scanned_at: str
    findings: list = field(default_factory=list)
    unreachable: list = field(default_factory=list)
    probe_counts: dict = field(default_factory=dict)
    duration_ms: int = 0


# Payload catalog

def encode_form(pairs) -> bytes:
    return '&'.join(quote(k, safe='') + '=' + quote(v, safe='') for k, v in pairs).encode('ascii')


def _form_payload(attack_class, name: str, pairs, notes: str = '') -> Payload:
    return Payload(attack_class, name, 'POST', FORM_CONTENT_TYPE, encode_form(pairs), notes)


def new_marker() -> str:
    return 'nosqli_' + uuid.uuid4().hex[:8]


def generate_payloads(attack_class: AttackClass, spec: EndpointSpec, marker: str = 'injection') -> list:
    if attack_class not in CLASSES_BY_KIND[spec.resolved_kind]:
        raise ConfigError(f'{attack_class.value} does not apply to {spec.resolved_kind} endpoint {spec.path}')
    params = list(spec.params)

    if attack_class is AttackClass.ARRAY_INJECTION:
        payloads = []
        for p in params:
            pairs = [(f'{q}[$ne]', '1') if q == p else (q, spec.bad_credentials.get(q, '')) for q in params]
            payloads.append(_form_payload(attack_class, f'ne-{p}', pairs))
        payloads.append(_form_payload(attack_class, 'ne-all', [(f'{p}[$ne]', '1') for p in params],
                                      'every credential becomes {$ne: "1"}'))
        payloads.append(_form_payload(attack_class, 'gt-empty-all', [(f'{p}[$gt]', '') for p in params],
                                      'every credential becomes {$gt: ""}'))
        return payloads

    if attack_class is AttackClass.OR_INJECTION:
        if not spec.known_username:
            raise ConfigError(f'{spec.path}: OR injection needs known_username')
        user_param, pass_param = params
        return [_form_payload(attack_class, 'or-always-true',
                              [(user_param, spec.known_username + OR_USERNAME_SUFFIX), (pass_param, OR_PASSWORD)],
                              'closes the username literal and appends $or: [{}, ...]')]

    if attack_class is AttackClass.JS_INJECTION:
        (param,) = params
        return [
            _form_payload(attack_class, 'breakout-as-printed',
                          [(param, Template(JS_PAYLOAD_AS_PRINTED).substitute(marker=marker))],
                          'closes one brace too few; a careful server reports a parse error'),
            _form_payload(attack_class, 'breakout-balanced',
                          [(param, Template(JS_PAYLOAD_BALANCED).substitute(marker=marker))],
                          f'closes the map function and inserts into {marker}'),
        ]

    return [_form_payload(attack_class, 'form-insert', [(CSRF_FIELD, marker)],
                          'what a cross-site HTML form can send')]


def baseline_payloads(spec: EndpointSpec) -> tuple:
    kind = spec.resolved_kind
    if kind == 'insert':
        bad = Payload(None, 'baseline-bad', 'POST', 'text/plain', b'')
        malformed = Payload(None, 'baseline-malformed', 'POST', JSON_CONTENT_TYPE, b'{"a":')
        return bad, malformed
    if kind == 'script':
        bad_pairs = [(p, spec.bad_credentials.get(p, 'nosuchfield')) for p in spec.params]
    else:
        bad_pairs = [(p, spec.bad_credentials[p]) for p in spec.params]
    bad = _form_payload(None, 'baseline-bad', bad_pairs)
    malformed = _form_payload(None, 'baseline-malformed', [(p, MALFORMED_VALUE) for p in spec.params])
    return bad, malformed


# Probing

def _digest(res: requests.Response) -> str:
    try:
        body = res.json()
    except ValueError:
        return 'sha256:' + hashlib.sha256(res.content).hexdigest()[:16]
    if isinstance(body, dict):
        return str(body.get('status', ''))
    return f'{type(body).__name__}:{len(body) if isinstance(body, list) else 1}'


def probe(endpoint: EndpointSpec, payload: Payload, base_url: str, session: requests.Session = None,
          timeout: float = REQUEST_TIMEOUT) -> Observation:
    session = session or api.new_session()
    started = time.monotonic()
    try:
        res = api.send(session, payload.method, base_url + endpoint.path, payload.body, payload.content_type,
                       timeout=timeout)
    except requests.RequestException as e:
        raise ProbeError(f'{endpoint.path}: {e.__class__.__name__}')
    return Observation(status=res.status_code, body_digest=_digest(res), latency=time.monotonic() - started)


def collect_baselines(endpoint: EndpointSpec, base_url: str, session: requests.Session = None,
                      timeout: float = REQUEST_TIMEOUT) -> tuple:
    bad, malformed = baseline_payloads(endpoint)
    return (probe(endpoint, bad, base_url, session, timeout),
            probe(endpoint, malformed, base_url, session, timeout))


# Oracles

def _success(status: int) -> bool:
    return 200 <= status < 300


def _failure(status: int) -> bool:
    return 400 <= status < 600


def detect(attack_class: AttackClass, baselines: tuple, attack: Observation, post_checks: Optional[bool],
           endpoint: str = '', payload_name: str = '') -> Optional[Finding]:
    """post_checks: None when state is not inspected, otherwise whether the marker collection has docs."""
    bad, malformed = baselines
    if attack_class in (AttackClass.ARRAY_INJECTION, AttackClass.OR_INJECTION):
        if attack.status == 200 and 400 <= bad.status < 500:
            return Finding(attack_class, endpoint, payload_name, bad, attack)
        return None
    if attack_class is AttackClass.JS_INJECTION:
        if not _success(attack.status):
            return None
        if post_checks is not None:
            return Finding(attack_class, endpoint, payload_name, malformed, attack) if post_checks else None
        if _failure(malformed.status):
            return Finding(attack_class, endpoint, payload_name, malformed, attack, confidence='tentative')
        return None
    if _success(attack.status):
        return Finding(attack_class, endpoint, payload_name, bad, attack)
    return None


# Scanning

def _scan_endpoint(base_url: str, spec: EndpointSpec, marker: str, timeout: float) -> tuple:
    session = api.new_session()
    try:
        baselines = collect_baselines(spec, base_url, session, timeout)
        probes = 2
        findings = []
        for attack_class in CLASSES_BY_KIND[spec.resolved_kind]:
            if attack_class is AttackClass.OR_INJECTION and not spec.known_username:
                logger.info('%s: no known username, skipping OR injection', spec.path)
                continue
            for payload in generate_payloads(attack_class, spec, marker):
                attack = probe(spec, payload, base_url, session, timeout)
                probes += 1
                post_checks = None
                if attack_class is AttackClass.JS_INJECTION and spec.enable_post_checks:
                    post_checks = bool(api.get_state(session, base_url, marker, timeout))
                finding = detect(attack_class, baselines, attack, post_checks, spec.path, payload.name)
                if finding:
                    logger.info('finding: %s on %s via %s', attack_class.value, spec.path, payload.name)
                    findings.append(finding)
        return findings, probes
    finally:
        session.close()


def scan(config: TargetConfig, workers: int = 4, timeout: float = REQUEST_TIMEOUT, marker: str = None,
         scanned_at: str = None) -> Report:
    marker = marker or new_marker()
    started = time.monotonic()
    report = Report(target=config.base_url,
                    scanned_at=scanned_at or datetime.now(timezone.utc).isoformat(timespec='seconds'))

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = [pool.submit(_scan_endpoint, config.base_url, spec, marker, timeout) for spec in config.endpoints]
        for spec, future in zip(config.endpoints, futures):
            try:
                findings, probes = future.result()
            except (ProbeError, requests.RequestException) as e:
                logger.warning('endpoint unreachable: %s', e)
                report.unreachable.append(spec.path)
                continue
            report.findings.extend(findings)
            report.probe_counts[spec.path] = probes

    if len(report.unreachable) == len(config.endpoints):
        raise ScanError(f'no endpoint of {config.base_url} was reachable')
    report.duration_ms = int((time.monotonic() - started) * 1000)
    return report


# Rendering

def _observation_json(prefix: str, obs: Observation) -> dict:
    return {f'{prefix}_status': obs.status, f'{prefix}_digest': obs.body_digest, f'{prefix}_latency': obs.latency}


def report_to_dict(report: Report) -> dict:
    return {
        'scanned_at': report.scanned_at,
        'target': report.target,
        'findings': [{
            'class': f.attack_class.value,
            'endpoint': f.endpoint,
            'payload_name': f.payload_name,
            'severity': f.severity,
            'confidence': f.confidence,
            'evidence': {**_observation_json('baseline', f.baseline), **_observation_json('attack', f.attack)},
        } for f in report.findings],
        'unreachable': list(report.unreachable),
        'probe_counts': dict(report.probe_counts),
        'duration_ms': report.duration_ms,
    }


def _observation_from(prefix: str, evidence: dict) -> Observation:
    return Observation(evidence[f'{prefix}_status'], evidence[f'{prefix}_digest'], evidence[f'{prefix}_latency'])


def report_from_json(text: str) -> Report:
    raw = json.loads(text)
    findings = [Finding(attack_class=AttackClass(f['class']), endpoint=f['endpoint'], payload_name=f['payload_name'],
                        baseline=_observation_from('baseline', f['evidence']),
                        attack=_observation_from('attack', f['evidence']),
                        severity=f['severity'], confidence=f['confidence'])
                for f in raw['findings']]
    return Report(target=raw['target'], scanned_at=raw['scanned_at'], findings=findings,
                  unreachable=list(raw['unreachable']), probe_counts=dict(raw['probe_counts']),
                  duration_ms=raw['duration_ms'])


def render_report(report: Report, fmt: str = 'text') -> str:
    if fmt == 'json':
        return json.dumps(report_to_dict(report), indent=2, ensure_ascii=False)
    if fmt != 'text':
        raise ValueError(f'unknown report format {fmt!r}')
    lines = []
    for f in report.findings:
        lines.append(f'[{f.severity.upper()}] {f.attack_class.value} {f.endpoint} via {f.payload_name} '
                     f'(baseline {f.baseline.status} -> attack {f.attack.status}, {f.confidence} confidence)')
    for path in report.unreachable:
        lines.append(f'[UNREACHABLE] {path}')
    by_class = {}
    for f in report.findings:
        by_class[f.attack_class.value] = by_class.get(f.attack_class.value, 0) + 1
    summary = f'{len(report.findings)} findings'
    if by_class:
        summary += ' (' + ', '.join(f'{k}={v}' for k, v in by_class.items()) + ')'
    lines.append(f'{summary} on {report.target} in {report.duration_ms} ms')
    return '\n'.join(lines) + '\n'


def classes_found(report: Report) -> set:
    return {f.attack_class for f in report.findings}
