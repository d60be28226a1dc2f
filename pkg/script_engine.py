"""Tokenizer, parser and tree-walking evaluator for the mapReduce script subset.

The subset covers what server-side map/reduce functions and the injected
top-level statements need: var, for, return, blocks, function literals,
member/index access, calls, object and array literals, ``<``, ``+``, ``-``,
``++`` and ``=``. Everything else is a parse error.
"""
import logging
import math
import re
from contextlib import contextmanager
from dataclasses import dataclass, field

import document_store
from constants import INT64_MAX, INT64_MIN, STEP_BUDGET

logger = logging.getLogger(__name__)

KEYWORDS = frozenset({'function', 'var', 'for', 'return', 'this'})
PUNCTUATION = frozenset('(){}[];,.:<+-=')
MAX_NESTING = 64
MAX_CALL_DEPTH = 100

_IDENT = re.compile(r'[A-Za-z_$][A-Za-z0-9_$]*')
_NUMBER = re.compile(r'[0-9]+(\.[0-9]+)?')
_ESCAPES = {'n': '\n', 't': '\t', 'r': '\r', '\\': '\\', "'": "'", '"': '"'}


class ScriptError(Exception):
    pass


class ScriptLexError(ScriptError):

    def __init__(self, message: str, offset: int):
        super().__init__(f'{message} at offset {offset}')
        self.offset = offset


class ScriptParseError(ScriptError):

    def __init__(self, message: str, offset: int):
        super().__init__(f'{message} at offset {offset}')
        self.offset = offset


class ScriptRuntimeError(ScriptError):
    pass


class ScriptBudgetError(ScriptRuntimeError):
    pass


@dataclass(frozen=True)
class Token:
    kind: str  # ident, keyword, num, str, punct
    value: object
    offset: int


# AST

@dataclass(frozen=True)
class Program:
    body: tuple


@dataclass(frozen=True)
class VarDecl:
    name: str
    init: object


@dataclass(frozen=True)
class For:
    init: object
    cond: object
    step: object
    body: tuple


@dataclass(frozen=True)
class Return:
    value: object


@dataclass(frozen=True)
class ExprStmt:
    expr: object


@dataclass(frozen=True)
class Block:
    body: tuple


@dataclass(frozen=True)
class NumLit:
    value: float


@dataclass(frozen=True)
class StrLit:
    value: str


@dataclass(frozen=True)
class ObjLit:
    pairs: tuple


@dataclass(frozen=True)
class ArrLit:
    items: tuple


@dataclass(frozen=True)
class Ident:
    name: str


@dataclass(frozen=True)
class This:
    pass


@dataclass(frozen=True)
class Member:
    obj: object
    name: str


@dataclass(frozen=True)
class Index:
    obj: object
    index: object


@dataclass(frozen=True)
class Call:
    callee: object
    args: tuple


@dataclass(frozen=True)
class FuncLit:
    params: tuple
    body: tuple


@dataclass(frozen=True)
class Binary:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class PostIncr:
    target: Ident


@dataclass(frozen=True)
class Assign:
    target: Ident
    value: object


# Tokenizer

def tokenize(src: str) -> list:
    tokens = []
    pos = 0
    while pos < len(src):
        ch = src[pos]
        if ch.isspace():
            pos += 1
        elif ch in ('"', "'"):
            start = pos
            pos += 1
            out = []
            while True:
                if pos >= len(src):
                    raise ScriptLexError('unterminated string literal', start)
                c = src[pos]
                if c == ch:
                    pos += 1
                    break
                if c == '\\' and pos + 1 < len(src):
                    out.append(_ESCAPES.get(src[pos + 1], src[pos + 1]))
                    pos += 2
                    continue
                out.append(c)
                pos += 1
            tokens.append(Token('str', ''.join(out), start))
        elif '0' <= ch <= '9':
            m = _NUMBER.match(src, pos)
            tokens.append(Token('num', float(m.group(0)), pos))
            pos = m.end()
        elif _IDENT.match(src, pos):
            m = _IDENT.match(src, pos)
            word = m.group(0)
            tokens.append(Token('keyword' if word in KEYWORDS else 'ident', word, pos))
            pos = m.end()
        elif src.startswith('++', pos):
            tokens.append(Token('punct', '++', pos))
            pos += 2
        elif ch in PUNCTUATION:
            tokens.append(Token('punct', ch, pos))
            pos += 1
        else:
            raise ScriptLexError(f'unexpected character {ch!r}', pos)
    return tokens


# Parser

class _Parser(object):

    def __init__(self, tokens: list, length: int):
        self.tokens = tokens
        self.pos = 0
        self.end = Token('eof', None, length)
        self.depth = 0

    def peek(self, ahead: int = 0) -> Token:
        i = self.pos + ahead
        return self.tokens[i] if i < len(self.tokens) else self.end

    def advance(self) -> Token:
        tok = self.peek()
        self.pos += 1
        return tok

    def at(self, value, kind: str = None) -> bool:
        tok = self.peek()
        if kind is not None and tok.kind != kind:
            return False
        return tok.kind in ('punct', 'keyword') and tok.value == value

    def expect(self, value) -> Token:
        if not self.at(value):
            raise self.error(f'expected {value!r}')
        return self.advance()

    def error(self, message: str) -> ScriptParseError:
        tok = self.peek()
        found = 'end of input' if tok.kind == 'eof' else repr(tok.value)
        return ScriptParseError(f'{message}, found {found}', tok.offset)

    @contextmanager
    def nested(self):
        self.depth += 1
        if self.depth > MAX_NESTING:
            raise self.error('script nested too deeply')
        try:
            yield
        finally:
            self.depth -= 1

    def program(self) -> Program:
        body = self.statements(closing=None)
        return Program(tuple(body))

    def statements(self, closing) -> list:
        body = []
        while True:
            while self.at(';'):
                self.advance()
            tok = self.peek()
            if tok.kind == 'eof':
                if closing is not None:
                    raise self.error(f'expected {closing!r}')
                return body
            if closing is not None and self.at(closing):
                return body
            body.append(self.statement())

    def statement(self):
        with self.nested():
            if self.at('var'):
                stmt = self.var_decl()
            elif self.at('for'):
                return self.for_stmt()
            elif self.at('return'):
                self.advance()
                if self.at(';') or self.at('}') or self.peek().kind == 'eof':
                    stmt = Return(None)
                else:
                    stmt = Return(self.expression())
            elif self.at('{'):
                return Block(tuple(self.block()))
            else:
                stmt = ExprStmt(self.expression())
            if self.at(';'):
                self.advance()
            return stmt

    def block(self) -> list:
        self.expect('{')
        body = self.statements(closing='}')
        self.expect('}')
        return body

    def var_decl(self) -> VarDecl:
        self.expect('var')
        tok = self.advance()
        if tok.kind != 'ident':
            self.pos -= 1
            raise self.error('expected a variable name')
        init = None
        if self.at('='):
            self.advance()
            init = self.expression()
        return VarDecl(tok.value, init)

    def for_stmt(self) -> For:
        self.expect('for')
        self.expect('(')
        init = self.var_decl() if self.at('var') else ExprStmt(self.expression())
        self.expect(';')
        cond = self.expression()
        self.expect(';')
        step = ExprStmt(self.expression())
        self.expect(')')
        if self.at('{'):
            body = tuple(self.block())
        else:
            body = (self.statement(),)
        return For(init, cond, step, body)

    def expression(self):
        with self.nested():
            return self.assignment()

    def assignment(self):
        left = self.comparison()
        if self.at('=', 'punct'):
            if not isinstance(left, Ident):
                raise self.error('can only assign to a variable')
            self.advance()
            return Assign(left, self.assignment())
        return left

    def comparison(self):
        left = self.additive()
        while self.at('<', 'punct'):
            self.advance()
            left = Binary('<', left, self.additive())
        return left

    def additive(self):
        left = self.postfix()
        while self.at('+', 'punct') or self.at('-', 'punct'):
            op = self.advance().value
            left = Binary(op, left, self.postfix())
        return left

    def postfix(self):
        expr = self.primary()
        while True:
            if self.at('.'):
                self.advance()
                tok = self.advance()
                if tok.kind not in ('ident', 'keyword'):
                    self.pos -= 1
                    raise self.error('expected a property name')
                expr = Member(expr, tok.value)
            elif self.at('['):
                self.advance()
                index = self.expression()
                self.expect(']')
                expr = Index(expr, index)
            elif self.at('('):
                if not isinstance(expr, (Member, Ident)):
                    raise self.error('only names and members can be called')
                self.advance()
                expr = Call(expr, tuple(self.comma_list(')')))
            elif self.at('++'):
                if not isinstance(expr, Ident):
                    raise self.error('can only increment a variable')
                self.advance()
                return PostIncr(expr)
            else:
                return expr

    def comma_list(self, closing: str) -> list:
        items = []
        if not self.at(closing):
            items.append(self.expression())
            while self.at(','):
                self.advance()
                items.append(self.expression())
        self.expect(closing)
        return items

    def primary(self):
        tok = self.peek()
        if tok.kind == 'num':
            self.advance()
            return NumLit(tok.value)
        if tok.kind == 'str':
            self.advance()
            return StrLit(tok.value)
        if tok.kind == 'ident':
            self.advance()
            return Ident(tok.value)
        if self.at('this'):
            self.advance()
            return This()
        if self.at('function'):
            return self.function()
        if self.at('{'):
            return self.object_literal()
        if self.at('['):
            self.advance()
            return ArrLit(tuple(self.comma_list(']')))
        if self.at('('):
            self.advance()
            expr = self.expression()
            self.expect(')')
            return expr
        if self.at('-', 'punct') and self.peek(1).kind == 'num':
            self.advance()
            return NumLit(-self.advance().value)
        raise self.error('unexpected token')

    def function(self) -> FuncLit:
        self.expect('function')
        self.expect('(')
        params = []
        if not self.at(')'):
            while True:
                tok = self.advance()
                if tok.kind != 'ident':
                    self.pos -= 1
                    raise self.error('expected a parameter name')
                params.append(tok.value)
                if not self.at(','):
                    break
                self.advance()
        self.expect(')')
        return FuncLit(tuple(params), tuple(self.block()))

    def object_literal(self) -> ObjLit:
        self.expect('{')
        pairs = []
        if not self.at('}'):
            while True:
                tok = self.advance()
                if tok.kind in ('ident', 'keyword', 'str'):
                    key = tok.value
                elif tok.kind == 'num':
                    key = _number_text(tok.value)
                else:
                    self.pos -= 1
                    raise self.error('expected a property key')
                self.expect(':')
                pairs.append((key, self.expression()))
                if not self.at(','):
                    break
                self.advance()
        self.expect('}')
        return ObjLit(tuple(pairs))


def parse_program(src: str) -> Program:
    tokens = tokenize(src)
    try:
        return _Parser(tokens, len(src)).program()
    except RecursionError:
        raise ScriptParseError('script nested too deeply', 0)


def compile_function(src: str) -> FuncLit:
    """The single function literal a map or reduce source must consist of."""
    program = parse_program(src)
    if len(program.body) != 1 or not isinstance(program.body[0], ExprStmt) \
            or not isinstance(program.body[0].expr, FuncLit):
        raise ScriptParseError('expected a single function literal', 0)
    return program.body[0].expr


# Pretty-printer

def _number_text(v) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def _string_text(s: str) -> str:
    return '"' + s.replace('\\', '\\\\').replace('"', '\\"').replace('\n', '\\n') + '"'


def _render_body(body) -> str:
    return '{ ' + ' '.join(render(s) for s in body) + ' }'


def render(node) -> str:
    match node:
        case Program(body):
            return ' '.join(render(s) for s in body)
        case VarDecl(name, None):
            return f'var {name};'
        case VarDecl(name, init):
            return f'var {name} = {render(init)};'
        case For(init, cond, step, body):
            return f'for ({render(init)[:-1]}; {render(cond)}; {render(step)[:-1]}) {_render_body(body)}'
        case Return(None):
            return 'return;'
        case Return(value):
            return f'return {render(value)};'
        case ExprStmt(expr):
            text = render(expr)
            # a leading brace would read back as a block
            return f'({text});' if text.startswith('{') else f'{text};'
        case Block(body):
            return _render_body(body)
        case NumLit(value):
            return _number_text(value)
        case StrLit(value):
            return _string_text(value)
        case ObjLit(pairs):
            return '{' + ', '.join(f'{_string_text(k)}: {render(v)}' for k, v in pairs) + '}'
        case ArrLit(items):
            return '[' + ', '.join(render(i) for i in items) + ']'
        case Ident(name):
            return name
        case This():
            return 'this'
        case Member(obj, name):
            return f'{render(obj)}.{name}'
        case Index(obj, index):
            return f'{render(obj)}[{render(index)}]'
        case Call(callee, args):
            return f'{render(callee)}(' + ', '.join(render(a) for a in args) + ')'
        case FuncLit(params, body):
            return f'function({", ".join(params)}) {_render_body(body)}'
        case Binary(op, left, right):
            return f'({render(left)} {op} {render(right)})'
        case PostIncr(target):
            return f'{target.name}++'
        case Assign(target, value):
            return f'({target.name} = {render(value)})'
    raise TypeError(f'cannot render {node!r}')


# Runtime values

class ScriptFunction(object):

    def __init__(self, node: FuncLit, scope):
        self.node = node
        self.scope = scope


class Builtin(object):

    def __init__(self, name: str, impl):
        self.name = name
        self.impl = impl

    def __call__(self, env, args: list):
        return self.impl(env, args)


class DbHandle(object):
    pass


class CollectionHandle(object):

    def __init__(self, name: str):
        self.name = name


class ArrayNamespace(object):
    pass


class Scope(object):

    def __init__(self, parent=None, this=None):
        self.vars = {}
        self.parent = parent
        self.this = this

    def lookup(self, name: str):
        scope = self
        while scope is not None:
            if name in scope.vars:
                return scope.vars[name]
            scope = scope.parent
        raise ScriptRuntimeError(f'{name} is not defined')

    def assign(self, name: str, value):
        scope = self
        while scope is not None:
            if name in scope.vars:
                scope.vars[name] = value
                return
            if scope.parent is None:
                scope.vars[name] = value
                return
            scope = scope.parent


@dataclass
class ExecOutcome:
    completed: bool = True
    statements_executed: int = 0
    side_effects: list = field(default_factory=list)
    error: str = None
    returned: object = None


class ExecEnv(object):
    """Store access, builtins and the step budget shared by one evaluation."""

    def __init__(self, store, step_budget: int = None):
        self.store = store
        self.step_budget = step_budget or STEP_BUDGET
        self.steps = 0
        self.call_depth = 0
        self.side_effects = []
        self.emit_sink = None
        self.globals = Scope()
        self.globals.vars['db'] = DbHandle()
        self.globals.vars['Array'] = ArrayNamespace()

    def tick(self):
        self.steps += 1
        if self.steps > self.step_budget:
            logger.warning('script exceeded its step budget of %d', self.step_budget)
            raise ScriptBudgetError(f'step budget of {self.step_budget} exceeded')

    @contextmanager
    def emitting(self, sink: list):
        previous, self.emit_sink = self.emit_sink, sink
        try:
            yield
        finally:
            self.emit_sink = previous


class _Return(Exception):

    def __init__(self, value):
        self.value = value


def is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def truthy(v) -> bool:
    if v is None or v is False:
        return False
    if is_number(v):
        return v != 0 and not math.isnan(v)
    if isinstance(v, str):
        return v != ''
    return True


def to_store_value(v):
    """Script value to document Value; integral numbers become Int."""
    if v is None or isinstance(v, (bool, str)):
        return v
    if is_number(v):
        if isinstance(v, float) and v.is_integer() and INT64_MIN <= v <= INT64_MAX:
            return int(v)
        return v
    if isinstance(v, list):
        return [to_store_value(x) for x in v]
    if isinstance(v, dict):
        return {k: to_store_value(x) for k, x in v.items()}
    raise ScriptRuntimeError('functions and handles cannot be stored')


def _to_text(v) -> str:
    if v is None:
        return 'null'
    if isinstance(v, bool):
        return 'true' if v else 'false'
    if is_number(v):
        return _number_text(v) if math.isfinite(v) else str(v)
    if isinstance(v, str):
        return v
    raise ScriptRuntimeError('cannot convert value to text')


# Builtins

def _arg(args: list, i: int):
    return args[i] if i < len(args) else None


def _emit(env: ExecEnv, args: list):
    env.emit_sink.append((_arg(args, 0), _arg(args, 1)))


def _array_sum(env: ExecEnv, args: list):
    values = _arg(args, 0)
    if not isinstance(values, list):
        raise ScriptRuntimeError('Array.sum needs an array')
    total = 0
    for v in values:
        if not is_number(v):
            raise ScriptRuntimeError(f'Array.sum cannot add {_to_text(v)!r}')
        total += v
    return total


def _collection_method(handle: CollectionHandle, name: str):
    if name == 'insert':
        def insert(env, args):
            doc = _arg(args, 0)
            if not isinstance(doc, dict):
                raise ScriptRuntimeError('insert needs an object')
            try:
                doc_id = document_store.insert(env.store, handle.name, to_store_value(doc))
            except document_store.StoreError as e:
                raise ScriptRuntimeError(str(e))
            env.side_effects.append((handle.name, doc_id))
            logger.info('script inserted _id=%s into %s', doc_id, handle.name)
        return Builtin(f'db.{handle.name}.insert', insert)
    if name == 'find':
        def find(env, args):
            query = _arg(args, 0)
            try:
                return document_store.find(env.store, handle.name, to_store_value(query or {}))
            except document_store.StoreError as e:
                raise ScriptRuntimeError(str(e))
        return Builtin(f'db.{handle.name}.find', find)
    if name == 'mapReduce':
        def map_reduce(env, args):
            map_fn, reduce_fn, options = _arg(args, 0), _arg(args, 1), _arg(args, 2)
            if not isinstance(map_fn, ScriptFunction) or not isinstance(reduce_fn, ScriptFunction):
                raise ScriptRuntimeError('mapReduce needs map and reduce functions')
            try:
                out = document_store.run_map_reduce(env.store, handle.name, map_fn.node, reduce_fn.node,
                                                    to_store_value(options), env)
            except document_store.StoreError as e:
                raise ScriptRuntimeError(str(e))
            return {'result': out}
        return Builtin(f'db.{handle.name}.mapReduce', map_reduce)
    return None


EMIT = Builtin('emit', _emit)
ARRAY_SUM = Builtin('Array.sum', _array_sum)


# Evaluator

def get_member(obj, name: str):
    if obj is None:
        raise ScriptRuntimeError(f'cannot read property {name!r} of null')
    if isinstance(obj, dict):
        return obj.get(name)
    if isinstance(obj, (list, str)):
        return len(obj) if name == 'length' else None
    if isinstance(obj, DbHandle):
        return CollectionHandle(name)
    if isinstance(obj, CollectionHandle):
        return _collection_method(obj, name)
    if isinstance(obj, ArrayNamespace):
        return ARRAY_SUM if name == 'sum' else None
    return None


def get_index(obj, index):
    if isinstance(obj, list):
        if is_number(index) and float(index).is_integer() and 0 <= index < len(obj):
            return obj[int(index)]
        return None
    if isinstance(obj, dict):
        key = index if isinstance(index, str) else _to_text(index)
        return obj.get(key)
    raise ScriptRuntimeError(f'cannot index {_to_text(obj) if not isinstance(obj, (ScriptFunction, Builtin)) else "a function"}')


def _binary(op: str, left, right):
    if op == '+':
        if is_number(left) and is_number(right):
            return left + right
        if isinstance(left, str) or isinstance(right, str):
            return _to_text(left) + _to_text(right)
        raise ScriptRuntimeError('+ needs numbers or text')
    if op == '-':
        if is_number(left) and is_number(right):
            return left - right
        raise ScriptRuntimeError('- needs numbers')
    if (is_number(left) and is_number(right)) or (isinstance(left, str) and isinstance(right, str)):
        return left < right
    raise ScriptRuntimeError('< needs two numbers or two texts')


def call_value(fn, this, args: list, env: ExecEnv):
    if isinstance(fn, ScriptFunction):
        return eval_function(fn.node, this, args, env, fn.scope)
    if isinstance(fn, Builtin):
        if fn is EMIT and env.emit_sink is None:
            raise ScriptRuntimeError('emit is only available inside map')
        return fn(env, args)
    raise ScriptRuntimeError('value is not a function')


def _eval(expr, scope: Scope, env: ExecEnv):
    env.tick()
    match expr:
        case NumLit(value):
            return value
        case StrLit(value):
            return value
        case ObjLit(pairs):
            return {k: _eval(v, scope, env) for k, v in pairs}
        case ArrLit(items):
            return [_eval(i, scope, env) for i in items]
        case Ident('emit') if env.emit_sink is not None:
            return EMIT
        case Ident(name):
            return scope.lookup(name)
        case This():
            while scope.parent is not None and scope.this is None:
                scope = scope.parent
            return scope.this
        case Member(obj, name):
            return get_member(_eval(obj, scope, env), name)
        case Index(obj, index):
            return get_index(_eval(obj, scope, env), _eval(index, scope, env))
        case Call(Member(obj, name), args):
            this = _eval(obj, scope, env)
            fn = get_member(this, name)
            return call_value(fn, this, [_eval(a, scope, env) for a in args], env)
        case Call(callee, args):
            fn = _eval(callee, scope, env)
            return call_value(fn, None, [_eval(a, scope, env) for a in args], env)
        case FuncLit():
            return ScriptFunction(expr, scope)
        case Binary(op, left, right):
            return _binary(op, _eval(left, scope, env), _eval(right, scope, env))
        case PostIncr(Ident(name)):
            old = scope.lookup(name)
            if not is_number(old):
                raise ScriptRuntimeError(f'cannot increment {name}')
            scope.assign(name, old + 1)
            return old
        case Assign(Ident(name), value):
            result = _eval(value, scope, env)
            scope.assign(name, result)
            return result
    raise ScriptRuntimeError(f'cannot evaluate {type(expr).__name__}')


def _exec(stmt, scope: Scope, env: ExecEnv):
    env.tick()
    match stmt:
        case VarDecl(name, init):
            scope.vars[name] = _eval(init, scope, env) if init is not None else None
        case For(init, cond, step, body):
            _exec(init, scope, env)
            while truthy(_eval(cond, scope, env)):
                for s in body:
                    _exec(s, scope, env)
                _exec(step, scope, env)
        case Return(value):
            raise _Return(_eval(value, scope, env) if value is not None else None)
        case ExprStmt(expr):
            _eval(expr, scope, env)
        case Block(body):
            for s in body:
                _exec(s, scope, env)
        case _:
            raise ScriptRuntimeError(f'cannot execute {type(stmt).__name__}')


def eval_function(fn: FuncLit, this_binding, args: list, env: ExecEnv, scope: Scope = None):
    """Call a function literal; falling off the end yields None."""
    env.call_depth += 1
    if env.call_depth > MAX_CALL_DEPTH:
        env.call_depth -= 1
        raise ScriptRuntimeError('call stack too deep')
    local = Scope(parent=scope or env.globals, this=this_binding)
    for i, param in enumerate(fn.params):
        local.vars[param] = _arg(args, i)
    try:
        for stmt in fn.body:
            _exec(stmt, local, env)
    except _Return as r:
        return r.value
    finally:
        env.call_depth -= 1
    return None


def exec_top_level(src: str, store, step_budget: int = None) -> ExecOutcome:
    """Execute concatenated statement text against the live store.

    A parse error executes nothing. A runtime error stops execution, leaving
    earlier writes in place. A top-level return halts the remaining statements.
    """
    program = parse_program(src)
    env = ExecEnv(store, step_budget)
    outcome = ExecOutcome(side_effects=env.side_effects)
    with store.lock.write():
        for stmt in program.body:
            try:
                _exec(stmt, env.globals, env)
            except _Return as r:
                outcome.statements_executed += 1
                try:
                    outcome.returned = to_store_value(r.value)
                except ScriptRuntimeError:
                    # functions and handles have no document form
                    outcome.returned = None
                break
            except ScriptRuntimeError as e:
                outcome.completed = False
                outcome.error = str(e)
                logger.info('script stopped after %d statements: %s', outcome.statements_executed, e)
                break
            except RecursionError:
                outcome.completed = False
                outcome.error = 'script nested too deeply'
                break
            outcome.statements_executed += 1
    return outcome
