import json
import logging
import os

from document_store import FixtureError, Store, check_value, seed

logger = logging.getLogger(__name__)

FIXTURE_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'data')


class FixtureSet(object):
    data = {}

    def __init__(self, dir: str = FIXTURE_DIR, name: str = 'fixtures', data_format: str = 'json'):
        self.directory = dir
        self.name = name
        self.data_format = data_format
        self.path = os.path.join(self.directory, self.name + '.' + self.data_format)

    def get_data(self) -> dict:
        if self.data_format != 'json':
            raise FixtureError(f'unsupported fixture format {self.data_format!r}')
        with open(self.path, encoding='utf-8') as f:
            data = json.load(f)
        if not isinstance(data, dict) or not all(isinstance(v, list) for v in data.values()):
            raise FixtureError(f'{self.path} must map collection names to lists of documents')
        for docs in data.values():
            for doc in docs:
                check_value(doc)
        self.data = data
        return self.data

    def collections(self) -> list:
        return list(self.data.keys())

    def count(self, collection: str) -> int:
        return len(self.data.get(collection, []))

    def load_into(self, store: Store) -> Store:
        if not self.data:
            self.get_data()
        seed(store, self.data)
        logger.info('seeded %s from %s', ', '.join(f'{c}={self.count(c)}' for c in self.collections()), self.path)
        return store
