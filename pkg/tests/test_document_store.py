import json
import math
import random

import pytest

import document_store
import script_engine
from constants import MAP_TEMPLATE, REDUCE_TEMPLATE
from datasets import FixtureSet
from document_store import (DocumentError, FixtureError, QueryError, Store, find, insert, map_reduce, match_query,
                            values_equal)


def test_insert_assigns_increasing_ids():
    store = Store()
    assert insert(store, 'c', {'a': 1}) == 1
    assert insert(store, 'c', {'a': 2}) == 2
    assert insert(store, 'other', {}) == 1
    assert find(store, 'c', {}) == [{'_id': 1, 'a': 1}, {'_id': 2, 'a': 2}]


@pytest.mark.parametrize('doc', [
    ['not', 'an', 'object'],
    {'_id': 5},
    {'n': math.nan},
    {'n': 2 ** 63},
    {'s': {1, 2}},
])
def test_insert_rejects_bad_documents(doc):
    with pytest.raises(DocumentError):
        insert(Store(), 'c', doc)


def test_insert_rejects_deep_documents():
    doc = value = {}
    for _ in range(101):
        value['n'] = {}
        value = value['n']
    with pytest.raises(DocumentError):
        insert(Store(), 'c', doc)


def test_find_returns_copies(store):
    found = find(store, 'logins', {'username': 'tolkien'})
    found[0]['password'] = 'changed'
    assert find(store, 'logins', {'username': 'tolkien'})[0]['password'] == 'hobbit'


def test_find_missing_collection_is_empty():
    assert find(Store(), 'nothing', {}) == []


def test_fixture_queries(store):
    assert len(find(store, 'logins', {'username': 'tolkien'})) == 1
    assert len(find(store, 'stores', {})) == 2
    assert len(find(store, 'logins', {'username': {'$ne': '1'}, 'password': {'$ne': '1'}})) == 5
    assert len(find(store, 'logins', {'username': {'$gt': ''}})) == 5
    assert len(find(store, 'logins', {'username': {'$in': ['lewis', 'herbert']}})) == 2
    assert len(find(store, 'logins', {'$or': [{}, {'a': 'a'}], '$comment': 'x'})) == 5
    assert find(store, 'logins', {'username': 'tolkien', 'password': 'wrong'}) == []


@pytest.mark.parametrize('query', [
    {'$or': []},
    {'$or': {'a': 1}},
    {'$where': '1'},
    {'a': {'$foo': 1}},
    {'a': {'$ne': 1, 'b': 2}},
    {'a': {'$in': 'x'}},
    {'a': {'$regex': '^(\\w+\\s?)*$'}},
    {'a': {'$where': 'sleep(5000)'}},
])
def test_invalid_queries(query):
    with pytest.raises(QueryError):
        find(Store(), 'c', query)


def test_values_equal():
    assert values_equal(1, 1.0)
    assert not values_equal(1, '1')
    assert not values_equal(True, 1)
    assert values_equal({'a': [1, 'x']}, {'a': [1.0, 'x']})
    assert not values_equal({'a': 1, 'b': 2}, {'b': 2, 'a': 1})


def test_missing_field_semantics():
    doc = {'a': 1}
    assert match_query({'b': {'$ne': 1}}, doc)
    assert not match_query({'b': {'$gt': 0}}, doc)
    assert not match_query({'b': None}, doc)
    assert match_query({'b': {'$exists': False}}, doc)


def test_seed_twice_is_refused(store):
    with pytest.raises(FixtureError):
        document_store.seed(store, {'logins': [{'username': 'x'}]})


def test_map_reduce_totals_match_brute_force(store):
    fixtures = FixtureSet().get_data()
    for field in ('amount', 'price'):
        expected = {}
        for doc in fixtures['stores']:
            expected[doc['name']] = expected.get(doc['name'], 0) + sum(item[field] for item in doc['items'])
        out = map_reduce(store, 'stores', MAP_TEMPLATE.replace('$param', field), REDUCE_TEMPLATE, {'out': 'totals'})
        totals = {d['key']: d['value'] for d in find(store, out, {})}
        assert totals == expected
        assert all(isinstance(v, int) for v in totals.values())


def test_map_reduce_needs_out(store):
    with pytest.raises(script_engine.ScriptRuntimeError):
        map_reduce(store, 'stores', MAP_TEMPLATE.replace('$param', 'price'), REDUCE_TEMPLATE, {})


# Randomised comparison against a separately written evaluator

POOL = [0, 1, 2, 1.0, 'x', 'y', True, None]
FIELDS = ['a', 'b', 'c']


def _same(x, y):
    numeric = (int, float)
    if type(x) in numeric and type(y) in numeric:
        return x == y
    return type(x) is type(y) and x == y


def _naive_op(op, arg, present, val):
    if op == '$eq':
        return present and _same(val, arg)
    if op == '$ne':
        return not (present and _same(val, arg))
    ordered = (type(val) in (int, float) and type(arg) in (int, float)) or (type(val) is str and type(arg) is str)
    if not present or not ordered:
        return False
    return val > arg if op == '$gt' else val < arg


def naive_match(query, doc):
    for key, val in query.items():
        if key == '$comment':
            continue
        if key == '$or':
            ok = any(naive_match(c, doc) for c in val)
        elif key == '$and':
            ok = all(naive_match(c, doc) for c in val)
        elif isinstance(val, dict):
            ok = all(_naive_op(op, arg, key in doc, doc.get(key)) for op, arg in val.items())
        else:
            ok = key in doc and _same(doc[key], val)
        if not ok:
            return False
    return True


def random_doc(rng):
    return {f: rng.choice(POOL) for f in FIELDS if rng.random() < 0.7}


def random_query(rng, depth=0):
    query = {}
    for _ in range(rng.randint(1, 2)):
        kind = rng.choice(['eq', '$ne', '$eq', '$gt', '$lt', '$or', '$and', '$comment'])
        if kind in ('$or', '$and'):
            if depth >= 3:
                continue
            query[kind] = [random_query(rng, depth + 1) for _ in range(rng.randint(1, 3))]
        elif kind == '$comment':
            query['$comment'] = 'note'
        elif kind == 'eq':
            query[rng.choice(FIELDS)] = rng.choice(POOL)
        else:
            query[rng.choice(FIELDS)] = {kind: rng.choice(POOL)}
    return query


def test_find_agrees_with_naive_evaluator():
    rng = random.Random(1234)
    for _ in range(1000):
        store = Store()
        docs = [random_doc(rng) for _ in range(rng.randint(0, 6))]
        for doc in docs:
            insert(store, 'c', doc)
        query = random_query(rng)
        expected = [i + 1 for i, doc in enumerate(docs) if naive_match(query, doc)]
        got = [d['_id'] for d in find(store, 'c', query)]
        assert got == expected, json.dumps(query)
