import logging

import requests

from constants import REQUEST_TIMEOUT

logger = logging.getLogger(__name__)

headers = {
    "User-Agent": "nosqli-lab-scanner/1.0",
    "Connection": "keep-alive",
    "Pragma": "no-cache",
    "Cache-Control": "no-cache",
    "Accept": "application/json",
}


def new_session() -> requests.Session:
    session = requests.Session()
    session.headers.update(headers)
    return session


def send(session: requests.Session, method: str, url: str, body: bytes = b'', content_type: str = None,
         timeout: float = REQUEST_TIMEOUT) -> requests.Response:
    """One HTTP exchange; 4xx and 5xx come back as responses, transport failures raise."""
    extra = {'Content-Type': content_type} if content_type else {}
    return session.request(method, url, data=body, headers=extra, timeout=timeout, allow_redirects=False)


def get_state(session: requests.Session, base_url: str, collection: str, timeout: float = REQUEST_TIMEOUT) -> list:
    res = session.get(f'{base_url}/__state/{collection}', timeout=timeout)
    if res.status_code == 200:
        try:
            docs = res.json()
        except ValueError:
            return []
        return docs if isinstance(docs, list) else []
    logger.warning('state check for %s returned %s', collection, res.status_code)
    return []
