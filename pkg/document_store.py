"""In-memory document store with MongoDB-style query documents.

Values are plain Python JSON trees: None, bool, int, float, str, list and
dict (insertion ordered). Every stored document gets an integer ``_id``
assigned by the store.
"""
import copy
import json
import logging
import math
import threading
from contextlib import contextmanager

import script_engine
from constants import INT64_MAX, INT64_MIN, MAX_DOC_DEPTH

logger = logging.getLogger(__name__)

COMPARISON_OPERATORS = ('$gt', '$gte', '$lt', '$lte')
FIELD_OPERATORS = frozenset({'$ne', '$eq', '$in', '$nin', '$exists'} | set(COMPARISON_OPERATORS))
LOGICAL_OPERATORS = frozenset({'$or', '$and'})


class StoreError(Exception):
    pass


class DocumentError(StoreError, TypeError):
    pass


class QueryError(StoreError, ValueError):
    pass


class FixtureError(StoreError):
    pass


class ReadWriteLock(object):
    """Many readers or one writer. The writing thread may re-enter as reader or writer."""

    def __init__(self):
        self._cond = threading.Condition(threading.Lock())
        self._readers = 0
        self._writer = None
        self._writer_depth = 0

    @contextmanager
    def read(self):
        me = threading.get_ident()
        with self._cond:
            if self._writer == me:
                self._writer_depth += 1
                reentrant = True
            else:
                while self._writer is not None:
                    self._cond.wait()
                self._readers += 1
                reentrant = False
        try:
            yield
        finally:
            with self._cond:
                if reentrant:
                    self._writer_depth -= 1
                else:
                    self._readers -= 1
                    if self._readers == 0:
                        self._cond.notify_all()

    @contextmanager
    def write(self):
        me = threading.get_ident()
        with self._cond:
            if self._writer == me:
                self._writer_depth += 1
            else:
                while self._writer is not None or self._readers > 0:
                    self._cond.wait()
                self._writer = me
                self._writer_depth = 1
        try:
            yield
        finally:
            with self._cond:
                self._writer_depth -= 1
                if self._writer_depth == 0:
                    self._writer = None
                    self._cond.notify_all()


class Collection(object):

    def __init__(self, name: str):
        self.name = name
        self.docs = []
        self.last_id = 0

    def next_id(self) -> int:
        self.last_id += 1
        return self.last_id


class Store(object):

    def __init__(self):
        self.collections = {}
        self.lock = ReadWriteLock()


# Value helpers

def is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def check_value(v, depth: int = 0):
    """Raise DocumentError unless v is a well-formed Value tree."""
    if depth > MAX_DOC_DEPTH:
        raise DocumentError(f'document nested deeper than {MAX_DOC_DEPTH} levels')
    if v is None or isinstance(v, (bool, str)):
        return
    if isinstance(v, int):
        if not INT64_MIN <= v <= INT64_MAX:
            raise DocumentError(f'integer {v} outside the 64-bit range')
    elif isinstance(v, float):
        if not math.isfinite(v):
            raise DocumentError('non-finite number')
    elif isinstance(v, list):
        for item in v:
            check_value(item, depth + 1)
    elif isinstance(v, dict):
        for key, item in v.items():
            if not isinstance(key, str):
                raise DocumentError(f'object key {key!r} is not text')
            check_value(item, depth + 1)
    else:
        raise DocumentError(f'{type(v).__name__} is not a document value')


def values_equal(a, b) -> bool:
    """Type-sensitive equality: 1 == 1.0, but 1 != '1' and True != 1."""
    if is_number(a) and is_number(b):
        return a == b
    if type(a) is not type(b):
        return False
    if isinstance(a, list):
        return len(a) == len(b) and all(values_equal(x, y) for x, y in zip(a, b))
    if isinstance(a, dict):
        if list(a.keys()) != list(b.keys()):
            return False
        return all(values_equal(a[k], b[k]) for k in a)
    return a == b


def canonical_json(v) -> str:
    return json.dumps(v, ensure_ascii=False, separators=(',', ':'), allow_nan=False)


def _reject_constant(name):
    raise ValueError(f'{name} is not valid JSON')


def parse_json(text):
    """Strict JSON: NaN and Infinity are rejected."""
    return json.loads(text, parse_constant=_reject_constant)


# Query evaluation

def _compare(op: str, field, arg) -> bool:
    if is_number(field) and is_number(arg):
        pass
    elif isinstance(field, str) and isinstance(arg, str):
        pass
    else:
        return False
    if op == '$gt':
        return field > arg
    if op == '$gte':
        return field >= arg
    if op == '$lt':
        return field < arg
    return field <= arg


def is_operator_object(v) -> bool:
    return isinstance(v, dict) and any(k.startswith('$') for k in v)


def validate_query(query, depth: int = 0):
    if not isinstance(query, dict):
        raise QueryError('query must be an object')
    if depth > MAX_DOC_DEPTH:
        raise QueryError('query nested too deeply')
    for key, val in query.items():
        if key in LOGICAL_OPERATORS:
            if not isinstance(val, list) or len(val) == 0:
                raise QueryError(f'{key} needs a non-empty array')
            for clause in val:
                validate_query(clause, depth + 1)
        elif key == '$comment':
            continue
        elif key.startswith('$'):
            raise QueryError(f'unknown top-level operator {key}')
        elif is_operator_object(val):
            for op, arg in val.items():
                if not op.startswith('$'):
                    raise QueryError(f'cannot mix operators and field {op!r} under {key!r}')
                if op not in FIELD_OPERATORS:
                    raise QueryError(f'unknown operator {op}')
                if op in ('$in', '$nin') and not isinstance(arg, list):
                    raise QueryError(f'{op} needs an array')


def _match_operator(op: str, arg, present: bool, field) -> bool:
    if op == '$ne':
        return not present or not values_equal(field, arg)
    if op == '$eq':
        return present and values_equal(field, arg)
    if op == '$in':
        return present and any(values_equal(field, x) for x in arg)
    if op == '$nin':
        return not present or not any(values_equal(field, x) for x in arg)
    if op == '$exists':
        return present == bool(arg)
    return present and _compare(op, field, arg)


def _matches(query: dict, doc: dict) -> bool:
    for key, val in query.items():
        if key == '$or':
            if not any(_matches(clause, doc) for clause in val):
                return False
        elif key == '$and':
            if not all(_matches(clause, doc) for clause in val):
                return False
        elif key == '$comment':
            continue
        elif is_operator_object(val):
            present = key in doc
            field = doc.get(key)
            if not all(_match_operator(op, arg, present, field) for op, arg in val.items()):
                return False
        elif key not in doc or not values_equal(doc[key], val):
            return False
    return True


def match_query(query: dict, doc: dict) -> bool:
    validate_query(query)
    if not isinstance(doc, dict):
        raise DocumentError('document must be an object')
    return _matches(query, doc)


# Collection operations

def insert(store: Store, collection: str, doc: dict) -> int:
    if not isinstance(doc, dict):
        raise DocumentError(f'can only insert objects, got {type(doc).__name__}')
    if '_id' in doc:
        raise DocumentError('_id is assigned by the store')
    check_value(doc)
    with store.lock.write():
        coll = store.collections.get(collection)
        if coll is None:
            coll = store.collections[collection] = Collection(collection)
        doc_id = coll.next_id()
        stored = {'_id': doc_id}
        stored.update(copy.deepcopy(doc))
        coll.docs.append(stored)
    logger.debug('inserted _id=%s into %s', doc_id, collection)
    return doc_id


def find(store: Store, collection: str, query: dict) -> list:
    validate_query(query)
    with store.lock.read():
        coll = store.collections.get(collection)
        if coll is None:
            return []
        return [copy.deepcopy(d) for d in coll.docs if _matches(query, d)]


def replace_collection(store: Store, collection: str, docs: list):
    for doc in docs:
        check_value(doc)
    coll = Collection(collection)
    for doc in docs:
        stored = {'_id': coll.next_id()}
        stored.update(copy.deepcopy(doc))
        coll.docs.append(stored)
    with store.lock.write():
        store.collections[collection] = coll


def drop(store: Store, collection: str):
    with store.lock.write():
        store.collections.pop(collection, None)


def collection_names(store: Store) -> list:
    with store.lock.read():
        return list(store.collections.keys())


# mapReduce

def _out_collection(options) -> str:
    if not isinstance(options, dict) or not isinstance(options.get('out'), str) or not options['out']:
        raise script_engine.ScriptRuntimeError('mapReduce needs an options object with a text "out"')
    return options['out']


def run_map_reduce(store: Store, collection: str, map_fn, reduce_fn, options, env) -> str:
    """Run already-parsed map/reduce function literals and replace the out collection.

    Nothing is written unless every map and reduce call succeeds.
    """
    out = _out_collection(options)
    with store.lock.write():
        groups = {}
        for doc in find(store, collection, {}):
            emitted = []
            with env.emitting(emitted):
                script_engine.eval_function(map_fn, doc, [], env)
            for key, val in emitted:
                key = script_engine.to_store_value(key)
                try:
                    ident = canonical_json(key)
                except ValueError:
                    raise script_engine.ScriptRuntimeError('emitted key is not a finite value')
                if ident not in groups:
                    groups[ident] = (key, [])
                groups[ident][1].append(script_engine.to_store_value(val))

        results = []
        for key, values in groups.values():
            reduced = script_engine.eval_function(reduce_fn, None, [key, values], env)
            results.append({'key': key, 'value': script_engine.to_store_value(reduced)})
        replace_collection(store, out, results)
    logger.info('mapReduce over %s wrote %d docs to %s', collection, len(results), out)
    return out


def map_reduce(store: Store, collection: str, map_src: str, reduce_src: str, options: dict,
               step_budget: int = None) -> str:
    map_fn = script_engine.compile_function(map_src)
    reduce_fn = script_engine.compile_function(reduce_src)
    env = script_engine.ExecEnv(store, step_budget=step_budget)
    return run_map_reduce(store, collection, map_fn, reduce_fn, options, env)


def seed(store: Store, fixtures: dict):
    """Load {collection: [docs]} into an empty store."""
    if collection_names(store):
        raise FixtureError('store already holds data; refusing to seed twice')
    for collection, docs in fixtures.items():
        for doc in docs:
            insert(store, collection, doc)
