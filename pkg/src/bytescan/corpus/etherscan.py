"""Verified-source fetcher for the Etherscan ``getsourcecode`` endpoint."""

from __future__ import annotations

import json
import logging
import os
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import requests

from bytescan.corpus.records import ADDRESS_RE, ContractRecord
from bytescan.errors import ApiFormatError, MalformedHex, NetworkError, RateLimited
from bytescan.evm.disasm import parse_hex, to_hex_tokens

log = logging.getLogger(__name__)

API_URL = "https://api.etherscan.io/api"
API_KEY_ENV = "ETHERSCAN_API_KEY"


@dataclass(frozen=True)
class Skip:
    address: str
    reason: str


@dataclass(frozen=True)
class ApiResult:
    source_code: str
    contract_name: str
    bytecode: str | None


@dataclass(frozen=True)
class ApiResponse:
    status: str
    message: str
    result: list[ApiResult]


@dataclass
class RetryPolicy:
    attempts: int = 3
    base_delay: float = 1.0
    factor: float = 2.0
    sleep: Callable[[float], None] = time.sleep

    def delay(self, attempt: int) -> float:
        return self.base_delay * self.factor**attempt


def _is_rate_limit(payload: dict) -> bool:
    text = str(payload.get("result", "")) + str(payload.get("message", ""))
    return str(payload.get("status")) == "0" and "rate limit" in text.lower()


def parse_response(body: str | bytes) -> ApiResponse:
    try:
        payload = json.loads(body)
    except (TypeError, ValueError) as exc:
        raise ApiFormatError(f"response is not JSON: {exc}") from None
    if not isinstance(payload, dict) or "status" not in payload or "result" not in payload:
        raise ApiFormatError("response lacks status/result fields")
    if str(payload["status"]) != "1":
        raise ApiFormatError(f"API error: {payload.get('message')}: {payload.get('result')}")
    entries = payload["result"]
    if not isinstance(entries, list):
        raise ApiFormatError("result is not a list")
    out = []
    for e in entries:
        if not isinstance(e, dict) or "SourceCode" not in e and "sourceCode" not in e:
            raise ApiFormatError("result entry lacks a sourceCode field")
        source = e.get("SourceCode", e.get("sourceCode", ""))
        name = e.get("ContractName", e.get("contractName", ""))
        code = e.get("Bytecode", e.get("bytecode"))
        out.append(ApiResult(str(source), str(name), code))
    return ApiResponse(str(payload["status"]), str(payload.get("message", "")), out)


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class EtherscanClient:
    """One request in flight; exponential backoff on transport errors, 5xx and rate limits."""

    def __init__(
        self,
        api_key: str | None = None,
        *,
        url: str = API_URL,
        session: Any = None,
        retry: RetryPolicy | None = None,
        timeout: float = 30.0,
    ) -> None:
        key = api_key or os.environ.get(API_KEY_ENV, "")
        if not key:
            raise ValueError(f"an API key is required (pass one or set {API_KEY_ENV})")
        self.api_key = key
        self.url = url
        self.session = session or requests.Session()
        self.retry = retry or RetryPolicy()
        self.timeout = timeout

    def _get(self, params: dict[str, str]) -> str:
        params = {**params, "apikey": self.api_key}
        last: Exception | None = None
        for attempt in range(self.retry.attempts):
            if attempt:
                self.retry.sleep(self.retry.delay(attempt - 1))
            try:
                resp = self.session.get(self.url, params=params, timeout=self.timeout)
            except requests.RequestException as exc:
                last = NetworkError(f"transport failure: {exc}")
                continue
            if resp.status_code == 429:
                last = RateLimited("HTTP 429 from API")
                continue
            if resp.status_code >= 500:
                last = NetworkError(f"HTTP {resp.status_code} from API")
                continue
            if resp.status_code != 200:
                raise NetworkError(f"HTTP {resp.status_code} from API")
            try:
                payload = json.loads(resp.text)
            except ValueError:
                raise ApiFormatError("response is not JSON") from None
            if isinstance(payload, dict) and _is_rate_limit(payload):
                last = RateLimited(str(payload.get("result")))
                continue
            return resp.text
        assert last is not None
        log.warning("giving up after %d attempts: %s", self.retry.attempts, last)
        raise last

    def source(self, address: str) -> ApiResponse:
        return parse_response(self._get({"module": "contract", "action": "getsourcecode", "address": address}))

    def bytecode(self, address: str) -> str:
        body = self._get({"module": "proxy", "action": "eth_getCode", "address": address, "tag": "latest"})
        try:
            code = json.loads(body)["result"]
        except (ValueError, KeyError, TypeError):
            raise ApiFormatError("eth_getCode response lacks a result") from None
        if not isinstance(code, str):
            raise ApiFormatError("eth_getCode result is not a string")
        return code

    def fetch_verified(self, address: str, out_dir: str | Path | None = None) -> ContractRecord | Skip:
        """Fetch one verified contract.

        Multi-file sources (more than one ``.sol`` mention) are skipped. The
        source is saved as ``<address>_<ContractName>.sol`` under ``out_dir``.
        When the source response carries no bytecode, it is fetched through
        ``eth_getCode``.
        """
        if not ADDRESS_RE.match(address):
            raise ValueError(f"invalid contract address {address!r}")
        resp = self.source(address)
        if not resp.result:
            return Skip(address, "empty result")
        entry = resp.result[0]
        if not entry.source_code:
            return Skip(address, "source not verified")
        if entry.source_code.count(".sol") > 1:
            return Skip(address, "multi-file source")
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            _atomic_write(out / f"{address}_{entry.contract_name}.sol", entry.source_code)
        code = entry.bytecode if entry.bytecode else self.bytecode(address)
        try:
            tokens = to_hex_tokens(parse_hex(code))
        except MalformedHex as exc:
            raise ApiFormatError(f"bytecode for {address} is not hex: {exc}") from None
        if not tokens:
            return Skip(address, "no deployed code")
        return ContractRecord(address, tuple(tokens), None, source=entry.contract_name)


def fetch_verified(address: str, api_key: str | None = None, **kwargs) -> ContractRecord | Skip:
    out_dir = kwargs.pop("out_dir", None)
    return EtherscanClient(api_key, **kwargs).fetch_verified(address, out_dir)
