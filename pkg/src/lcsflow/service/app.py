"""HTTP front end: one POST endpoint per CLI verb."""
from __future__ import annotations

import logging

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .. import __version__, commands
from ..errors import ConfigError, LcsError
from ..schemas import (BenchRequest, ConvergenceRequest, FtleRequest, IsleRequest, RidgesRequest,
                       RunConfig, TraceRequest)

log = logging.getLogger(__name__)

_STATUS = {1: 400, 2: 500, 3: 422}


def create_app() -> FastAPI:
    app = FastAPI(title="lcsflow", version=__version__)

    @app.exception_handler(LcsError)
    async def _lcs_error(request: Request, exc: LcsError):
        return JSONResponse(status_code=_STATUS.get(exc.exit_code, 500),
                            content={"error": str(exc), "kind": type(exc).__name__,
                                     "exit_code": exc.exit_code})

    @app.exception_handler(RequestValidationError)
    async def _bad_request(request: Request, exc: RequestValidationError):
        msg = "; ".join(f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in exc.errors())
        return JSONResponse(status_code=400, content={"error": msg, "kind": "ConfigError",
                                                      "exit_code": ConfigError.exit_code})

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/simulate")
    def simulate(config: RunConfig):
        return commands.cmd_simulate(config)

    @app.post("/ftle")
    def ftle(req: FtleRequest):
        return commands.cmd_ftle(req)

    @app.post("/isle")
    def isle(req: IsleRequest):
        return commands.cmd_isle(req)

    @app.post("/ridges")
    def ridges(req: RidgesRequest):
        return commands.cmd_ridges(req)

    @app.post("/convergence")
    def convergence(req: ConvergenceRequest):
        return commands.cmd_convergence(req)

    @app.post("/bench")
    def bench(req: BenchRequest):
        return commands.cmd_bench(req)

    @app.post("/trace")
    def trace(req: TraceRequest):
        return commands.cmd_trace(req)

    return app


app = create_app()
