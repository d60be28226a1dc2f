import json
import os

import pytest

from form_decoder import APPEND, DecodeError, KeyPath, decode_form, form_to_value, parse_key_path

GOLDEN = os.path.join(os.path.dirname(__file__), 'golden', 'parse_str.json')

with open(GOLDEN, encoding='utf-8') as f:
    GOLDEN_CASES = json.load(f)


def test_golden_corpus_is_large_enough():
    assert len(GOLDEN_CASES) >= 20


@pytest.mark.parametrize('case', GOLDEN_CASES, ids=[c['body'] or '<empty>' for c in GOLDEN_CASES])
def test_decode_form_matches_parse_str(case):
    got = decode_form(case['body'])
    assert json.dumps(got, ensure_ascii=False) == json.dumps(case['expected'], ensure_ascii=False)


def php_json_shape(tree):
    """PHP arrays json_encode as lists when their keys are exactly 0..n-1 in order; decode_form keeps maps."""
    if isinstance(tree, list):
        return [php_json_shape(v) for v in tree]
    if isinstance(tree, dict):
        if list(tree) == [str(i) for i in range(len(tree))]:
            return [php_json_shape(v) for v in tree.values()]
        return {k: php_json_shape(v) for k, v in tree.items()}
    return tree


PHP_JSON_CASES = [c for c in GOLDEN_CASES if 'php_json' in c]


@pytest.mark.parametrize('case', PHP_JSON_CASES, ids=[c['body'] for c in PHP_JSON_CASES])
def test_sequential_maps_compare_as_php_lists(case):
    assert php_json_shape(decode_form(case['body'])) == case['php_json']


def test_oversized_integer_keys_are_text():
    key = '1' * 5000
    assert decode_form(f'a[{key}]=x&a[]=y') == {'a': {key: 'x', '0': 'y'}}


def test_parse_key_path():
    assert parse_key_path('username') == KeyPath('username')
    assert parse_key_path('username[$ne]') == KeyPath('username', ['$ne'])
    assert parse_key_path('a[][b]') == KeyPath('a', [APPEND, 'b'])
    assert parse_key_path('a[ ]') == KeyPath('a', [APPEND])
    assert parse_key_path('a[b') == KeyPath('a_b')


@pytest.mark.parametrize('raw_key', ['', '[a]', '   '])
def test_parse_key_path_without_a_root(raw_key):
    with pytest.raises(DecodeError):
        parse_key_path(raw_key)


def test_bytes_and_text_decode_alike():
    assert decode_form(b'a[b]=1&c=2') == decode_form('a[b]=1&c=2')


def test_invalid_utf8_is_replaced():
    assert decode_form(b'a=%ff') == {'a': '�'}


def test_nesting_deeper_than_64_drops_the_variable():
    deep = 'a' + '[x]' * 65 + '=1'
    assert decode_form(deep + '&b=2') == {'b': '2'}
    assert decode_form('a' + '[x]' * 64 + '=1') != {}


def test_more_than_1000_pairs_are_ignored():
    tree = decode_form('&'.join(f'k{i}=v' for i in range(1005)))
    assert len(tree) == 1000
    assert 'k999' in tree
    assert 'k1000' not in tree


def test_form_to_value_keeps_structure():
    tree = decode_form('username[$ne]=1&tags[]=a&tags[]=b')
    value = form_to_value(tree)
    assert value == {'username': {'$ne': '1'}, 'tags': ['a', 'b']}
    assert value is not tree
