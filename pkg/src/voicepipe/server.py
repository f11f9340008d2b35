"""WebSocket front for the gateway, plus optional static file serving."""
from __future__ import annotations

import asyncio
import http
import logging
import mimetypes
from pathlib import Path
from typing import Optional

from websockets.asyncio.server import serve
from websockets.datastructures import Headers
from websockets.http11 import Response

from .gateway import Gateway, WebSocketTransport

logger = logging.getLogger(__name__)

DEFAULT_BIND = "127.0.0.1:7705"
SESSION_PATH = "/v1/session"


class GatewayServer:
    def __init__(
        self,
        gateway: Gateway,
        host: str = "127.0.0.1",
        port: int = 7705,
        static_dir: Optional[str] = None,
    ):
        self.gateway = gateway
        self.host = host
        self.port = port
        self.static_dir = Path(static_dir).resolve() if static_dir else None
        self._server = None

    async def __aenter__(self):
        await self.start()
        return self

    async def __aexit__(self, *exc):
        await self.stop()

    async def start(self) -> None:
        self._server = await serve(
            self._handler,
            self.host,
            self.port,
            process_request=self._process_request,
            max_size=2**22,
        )

    @property
    def bound_port(self) -> int:
        return self._server.sockets[0].getsockname()[1]

    async def stop(self) -> None:
        await self.gateway.close_all()
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
            self._server = None

    async def serve_forever(self) -> None:
        await asyncio.get_running_loop().create_future()

    async def _handler(self, connection) -> None:
        path = connection.request.path if connection.request else ""
        if path.split("?")[0] != SESSION_PATH:
            await connection.close(1008, f"connect on {SESSION_PATH}")
            return
        await self.gateway.handle_connection(WebSocketTransport(connection))

    def _process_request(self, connection, request):
        path = request.path.split("?")[0]
        if path == SESSION_PATH:
            return None  # proceed with the WebSocket upgrade
        if "Upgrade" in request.headers.get("Connection", ""):
            return None
        if self.static_dir is None:
            return connection.respond(http.HTTPStatus.NOT_FOUND, "not found\n")
        return self._static_response(connection, path)

    def _static_response(self, connection, path: str):
        rel = path.lstrip("/") or "index.html"
        target = (self.static_dir / rel).resolve()
        if not str(target).startswith(str(self.static_dir)) or not target.is_file():
            return connection.respond(http.HTTPStatus.NOT_FOUND, "not found\n")
        body = target.read_bytes()
        ctype = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
        headers = Headers(
            [("Content-Type", ctype), ("Content-Length", str(len(body)))]
        )
        return Response(http.HTTPStatus.OK.value, "OK", headers, body)
