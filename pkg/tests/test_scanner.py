import json
import os
import socket

import pytest

import scanner
import utils
from constants import JS_PAYLOAD_AS_PRINTED, JS_PAYLOAD_BALANCED, OR_PASSWORD, OR_USERNAME_SUFFIX, AttackClass
from form_decoder import decode_form, form_to_value
from scanner import EndpointSpec, Finding, Observation, Report

CONFIG_DIR = os.path.join(os.path.dirname(__file__), '..', 'configs')

LOGIN = EndpointSpec('/vuln/login-array', ('username', 'password'),
                     bad_credentials={'username': 'nobody', 'password': 'wrong-password'}, known_username='tolkien')
SCRIPT = EndpointSpec('/vuln/mapreduce', ('field',), bad_credentials={'field': 'nosuchfield'})
INSERT = EndpointSpec('/rest/signups', ('nosqli_marker',), kind='insert')


def obs(status):
    return Observation(status, 'x', 0.01)


def payload_named(payloads, name):
    return next(p for p in payloads if p.name == name)


def test_kinds_are_inferred():
    assert LOGIN.resolved_kind == 'login'
    assert SCRIPT.resolved_kind == 'script'
    assert EndpointSpec('/rest/x', ('a', 'b')).resolved_kind == 'insert'


def test_ne_all_encoding():
    payload = payload_named(scanner.generate_payloads(AttackClass.ARRAY_INJECTION, LOGIN), 'ne-all')
    assert payload.body == b'username%5B%24ne%5D=1&password%5B%24ne%5D=1'
    assert form_to_value(decode_form(payload.body)) == {'username': {'$ne': '1'}, 'password': {'$ne': '1'}}


def test_single_param_ne_keeps_the_other_bad_credential():
    payload = payload_named(scanner.generate_payloads(AttackClass.ARRAY_INJECTION, LOGIN), 'ne-password')
    assert form_to_value(decode_form(payload.body)) == {'username': 'nobody', 'password': {'$ne': '1'}}


def test_script_payload_survives_form_encoding():
    payload = payload_named(scanner.generate_payloads(AttackClass.JS_INJECTION, SCRIPT, marker='m1'),
                            'breakout-balanced')
    assert form_to_value(decode_form(payload.body)) == {'field': JS_PAYLOAD_BALANCED.replace('$marker', 'm1')}


def catalog_fields(marker):
    bad_user, bad_pass = LOGIN.bad_credentials['username'], LOGIN.bad_credentials['password']
    return {
        'ne-username': {'username': {'$ne': '1'}, 'password': bad_pass},
        'ne-password': {'username': bad_user, 'password': {'$ne': '1'}},
        'ne-all': {'username': {'$ne': '1'}, 'password': {'$ne': '1'}},
        'gt-empty-all': {'username': {'$gt': ''}, 'password': {'$gt': ''}},
        'or-always-true': {'username': 'tolkien' + OR_USERNAME_SUFFIX, 'password': OR_PASSWORD},
        'breakout-as-printed': {'field': JS_PAYLOAD_AS_PRINTED.replace('$marker', marker)},
        'breakout-balanced': {'field': JS_PAYLOAD_BALANCED.replace('$marker', marker)},
        'form-insert': {'nosqli_marker': marker},
    }


def test_every_catalog_payload_decodes_to_its_fields():
    expected = catalog_fields('m1')
    seen = set()
    for spec in (LOGIN, SCRIPT, INSERT):
        for attack_class in scanner.CLASSES_BY_KIND[spec.resolved_kind]:
            for payload in scanner.generate_payloads(attack_class, spec, marker='m1'):
                assert payload.content_type == 'application/x-www-form-urlencoded'
                assert form_to_value(decode_form(payload.body)) == expected[payload.name], payload.name
                seen.add(payload.name)
    assert seen == set(expected)


def test_or_payload_needs_a_known_username():
    spec = EndpointSpec('/x', ('u', 'p'), bad_credentials={'u': 'a', 'p': 'b'})
    with pytest.raises(scanner.ConfigError):
        scanner.generate_payloads(AttackClass.OR_INJECTION, spec)


def test_classes_must_fit_the_endpoint():
    with pytest.raises(scanner.ConfigError):
        scanner.generate_payloads(AttackClass.CSRF_PROBE, LOGIN)


def test_insert_baselines_are_not_forms():
    bad, malformed = scanner.baseline_payloads(INSERT)
    assert bad.content_type == 'text/plain'
    assert malformed.body == b'{"a":'


def test_markers_are_unique():
    assert len({scanner.new_marker() for _ in range(50)}) == 50


@pytest.mark.parametrize('attack_class', [AttackClass.ARRAY_INJECTION, AttackClass.OR_INJECTION])
@pytest.mark.parametrize('bad, attack, found', [(401, 200, True), (400, 200, True), (401, 401, False),
                                                (401, 400, False), (200, 200, False), (500, 200, False)])
def test_login_oracle(attack_class, bad, attack, found):
    finding = scanner.detect(attack_class, (obs(bad), obs(400)), obs(attack), None)
    assert (finding is not None) == found


@pytest.mark.parametrize('attack, malformed, post_checks, expected', [
    (200, 500, True, 'high'),
    (200, 500, False, None),
    (500, 500, True, None),
    (200, 500, None, 'tentative'),
    (200, 200, None, None),
])
def test_script_oracle(attack, malformed, post_checks, expected):
    finding = scanner.detect(AttackClass.JS_INJECTION, (obs(400), obs(malformed)), obs(attack), post_checks)
    assert (finding.confidence if finding else None) == expected


@pytest.mark.parametrize('attack, found', [(201, True), (200, True), (415, False), (400, False)])
def test_insert_oracle(attack, found):
    finding = scanner.detect(AttackClass.CSRF_PROBE, (obs(400), obs(400)), obs(attack), None)
    assert (finding is not None) == found


@pytest.mark.parametrize('raw', [
    {'endpoints': [{'path': '/a', 'params': []}]},
    {'base_url': 'ftp://x', 'endpoints': [{'path': '/a', 'params': []}]},
    {'base_url': 'http://x', 'endpoints': []},
    {'base_url': 'http://x', 'endpoints': [{'path': 'a', 'params': []}]},
    {'base_url': 'http://x', 'endpoints': [{'path': '/a', 'params': ['u', 'p'], 'bad_credentials': {'u': 'x'}}]},
    {'base_url': 'http://x', 'endpoints': [{'path': '/a', 'params': ['a', 'b'], 'kind': 'script'}]},
    {'base_url': 'http://x', 'endpoints': [{'path': '/a', 'params': [], 'method': 'GET'}]},
    {'base_url': 'http://x', 'endpoints': [{'path': '/a', 'params': [], 'extra': 1}]},
])
def test_bad_configs_are_rejected(raw):
    with pytest.raises(scanner.ConfigError):
        scanner.TargetConfig.from_dict(raw)


def test_shipped_configs_load():
    vulnerable = scanner.load_target_config(os.path.join(CONFIG_DIR, 'vulnerable_lab.json'))
    hardened = scanner.load_target_config(os.path.join(CONFIG_DIR, 'hardened_lab.json'))
    assert [e.resolved_kind for e in vulnerable.endpoints] == ['login', 'login', 'script', 'insert']
    assert all(e.path.startswith(('/safe', '/rest')) for e in hardened.endpoints)


def test_unreadable_configs(tmp_path):
    with pytest.raises(scanner.ConfigError):
        scanner.load_target_config(str(tmp_path / 'missing.json'))
    broken = tmp_path / 'broken.json'
    broken.write_text('{"base_url":')
    with pytest.raises(scanner.ConfigError):
        scanner.load_target_config(str(broken))


def sample_report():
    finding = Finding(AttackClass.CSRF_PROBE, '/rest/signups', 'form-insert', obs(400), Observation(201, 'created', 0.5))
    return Report(target='http://127.0.0.1:1', scanned_at='2026-01-01T00:00:00+00:00', findings=[finding],
                  unreachable=['/down'], probe_counts={'/rest/signups': 3}, duration_ms=12)


def test_empty_text_report():
    text = scanner.render_report(Report(target='http://lab', scanned_at='now'), 'text')
    assert text == '0 findings on http://lab in 0 ms\n'


def test_text_report_lists_findings_and_unreachable():
    text = scanner.render_report(sample_report(), 'text')
    assert '[HIGH] CsrfProbe /rest/signups via form-insert (baseline 400 -> attack 201' in text
    assert '[UNREACHABLE] /down' in text
    assert text.endswith('1 findings (CsrfProbe=1) on http://127.0.0.1:1 in 12 ms\n')


def test_json_report_is_lossless():
    report = sample_report()
    rendered = scanner.render_report(report, 'json')
    assert list(json.loads(rendered)) == ['scanned_at', 'target', 'findings', 'unreachable', 'probe_counts',
                                          'duration_ms']
    assert scanner.report_from_json(rendered) == report


def test_unknown_format():
    with pytest.raises(ValueError):
        scanner.render_report(sample_report(), 'xml')


def test_report_frames():
    report = sample_report()
    findings = utils.findings_frame(report)
    assert findings.loc[0, 'Attack Status'] == 201
    assert findings.loc[0, 'Attack Latency (ms)'] == 500.0
    frame = utils.probe_frame(report)
    assert list(frame['Endpoint']) == ['/rest/signups', '/down']
    assert list(frame['Reachable']) == [True, False]
    assert utils.to_excel(findings)[:2] == b'PK'


def test_vulnerable_lab_shows_every_class(vulnerable_lab):
    report = scanner.scan(scanner.lab_target_config(vulnerable_lab.base_url))
    assert scanner.classes_found(report) == set(AttackClass)
    assert report.unreachable == []
    names = {(f.attack_class, f.payload_name) for f in report.findings}
    assert (AttackClass.ARRAY_INJECTION, 'ne-all') in names
    assert (AttackClass.ARRAY_INJECTION, 'gt-empty-all') in names
    assert (AttackClass.JS_INJECTION, 'breakout-balanced') in names
    assert (AttackClass.JS_INJECTION, 'breakout-as-printed') not in names
    assert report.probe_counts == {'/vuln/login-array': 7, '/vuln/login-concat': 7, '/vuln/mapreduce': 4,
                                   '/rest/signups': 3}


def test_hardened_lab_shows_nothing(hardened_lab):
    report = scanner.scan(scanner.lab_target_config(hardened_lab.base_url, hardened=True))
    assert report.findings == []
    assert report.unreachable == []


def test_unreachable_endpoints_are_listed(vulnerable_lab, monkeypatch):
    real_probe = scanner.probe

    def flaky_probe(endpoint, payload, base_url, session=None, timeout=5):
        if endpoint.path == '/down':
            raise scanner.ProbeError('/down: ConnectionError')
        return real_probe(endpoint, payload, base_url, session, timeout)

    monkeypatch.setattr(scanner, 'probe', flaky_probe)
    config = scanner.lab_target_config(vulnerable_lab.base_url)
    config.endpoints.append(EndpointSpec('/down', ('x',), kind='insert'))
    report = scanner.scan(config)
    assert report.unreachable == ['/down']
    assert '/down' not in report.probe_counts


def closed_port():
    with socket.socket() as s:
        s.bind(('127.0.0.1', 0))
        return s.getsockname()[1]


def test_nothing_reachable_is_an_error():
    config = scanner.lab_target_config(f'http://127.0.0.1:{closed_port()}')
    with pytest.raises(scanner.ScanError):
        scanner.scan(config, timeout=1)
