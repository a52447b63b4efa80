"""Newline-delimited JSON over TCP: one request line in, one response line out."""

from __future__ import annotations

import asyncio
import logging
import signal

from .engine import Engine

log = logging.getLogger(__name__)

MAX_LINE = 1 << 20


async def _serve_conn(engine: Engine, reader: asyncio.StreamReader,
                      writer: asyncio.StreamWriter):
    peer = writer.get_extra_info("peername")
    try:
        while True:
            try:
                line = await reader.readline()
            except (asyncio.LimitOverrunError, ValueError):
                writer.write(b'{"type":"error","id":null,"code":"bad_request",'
                             b'"message":"line too long","retriable":false}\n')
                await writer.drain()
                break
            if not line:
                break
            if not line.strip():
                continue
            writer.write(engine.handle_line(line).encode() + b"\n")
            await writer.drain()
    except ConnectionError:
        log.debug("connection from %s dropped", peer)
    finally:
        writer.close()


async def start(engine: Engine, host: str = "127.0.0.1", port: int = 7070):
    return await asyncio.start_server(
        lambda r, w: _serve_conn(engine, r, w), host, port, limit=MAX_LINE)


def serve_forever(engine: Engine, host: str = "127.0.0.1", port: int = 7070):
    """Serve until SIGINT or SIGTERM, then flush the decision log."""

    async def main():
        server = await start(engine, host, port)
        addrs = ", ".join(str(s.getsockname()) for s in server.sockets)
        log.info("listening on %s", addrs)
        stop = asyncio.Event()
        loop = asyncio.get_running_loop()
        for sig in (signal.SIGINT, signal.SIGTERM):
            loop.add_signal_handler(sig, stop.set)
        async with server:
            await stop.wait()

    try:
        asyncio.run(main())
    finally:
        engine.close()
