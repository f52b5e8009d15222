"""Thin HTTP client for the search service.

Without a server URL the client mounts the service in-process over an ASGI
transport, so the CLI works standalone while every call still crosses the
same request/response contract a remote deployment uses.
"""

from __future__ import annotations

import asyncio

import httpx

from .errors import ArchslimError
from .service import create_app


class _InProcessTransport(httpx.BaseTransport):
    """Run requests against an ASGI app from a synchronous client."""

    def __init__(self, app):
        self._transport = httpx.ASGITransport(app=app)

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        async def call():
            response = await self._transport.handle_async_request(request)
            content = await response.aread()
            await response.aclose()
            return response.status_code, response.headers, content

        status, headers, content = asyncio.run(call())
        return httpx.Response(status_code=status, headers=headers, content=content,
                              request=request)

    def close(self) -> None:
        asyncio.run(self._transport.aclose())


class ServiceError(ArchslimError):
    def __init__(self, status_code: int, detail: str):
        self.status_code = status_code
        self.detail = detail
        super().__init__(f"service returned {status_code}: {detail}")

    @property
    def is_config_error(self) -> bool:
        return 400 <= self.status_code < 500


class ServiceClient:
    def __init__(self, server: str | None = None, timeout: float | None = None):
        if server:
            self._client = httpx.Client(base_url=server, timeout=timeout)
        else:
            transport = _InProcessTransport(create_app())
            self._client = httpx.Client(transport=transport, base_url="http://archslim",
                                        timeout=timeout)

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "ServiceClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _unwrap(self, response: httpx.Response) -> dict:
        if response.status_code >= 400:
            try:
                detail = response.json().get("detail", response.text)
            except Exception:
                detail = response.text
            raise ServiceError(response.status_code, str(detail))
        return response.json()

    def get(self, path: str) -> dict:
        return self._unwrap(self._client.get(path))

    def post(self, path: str, payload: dict) -> dict:
        return self._unwrap(self._client.post(path, json=payload))
