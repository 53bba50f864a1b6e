"""Thin HTTP client used by the CLI's ``--server`` mode."""
from __future__ import annotations

import httpx

from ..errors import CMRReconError, DataError, NumericalError, ValidationError

_BY_EXIT = {2: ValidationError, 3: DataError, 4: NumericalError}


class ServiceClient:
    def __init__(self, base_url: str, timeout: float = 600.0, transport=None):
        self.http = httpx.Client(base_url=base_url, timeout=timeout, transport=transport)

    def _post(self, path: str, body: dict) -> dict:
        try:
            resp = self.http.post(path, json=body)
        except httpx.HTTPError as exc:
            raise CMRReconError(f"cannot reach service at {self.http.base_url}: {exc}") from exc
        if resp.is_success:
            return resp.json()
        try:
            info = resp.json()
            exc_cls = _BY_EXIT.get(info.get("exit_code"), CMRReconError)
            msg = info.get("detail", resp.text)
        except ValueError:
            exc_cls, msg = CMRReconError, resp.text
        raise exc_cls(f"service error ({resp.status_code}): {msg}")

    def health(self) -> dict:
        return self.http.get("/health").json()

    def mask(self, **body) -> dict:
        return self._post("/masks", body)

    def metrics(self, pred, gt) -> dict:
        return self._post("/metrics", {"pred": pred, "gt": gt})

    def reconstruct(self, **body) -> dict:
        return self._post("/reconstruct", body)

    def evaluate(self, **body) -> dict:
        return self._post("/evaluate", body)
