from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from contextlib import asynccontextmanager
import uvicorn

from app.routes import experiments, structures
from app.models.database import engine, Base
from app.models import schemas  # noqa: F401  registers ExperimentRun on Base
from app.utils.config import get_settings
from app.utils.logging import configure_logging

settings = get_settings()
configure_logging(settings.log_level)

@asynccontextmanager
async def lifespan(app: FastAPI):
    # Create database tables
    Base.metadata.create_all(bind=engine)
    yield

app = FastAPI(
    title="Beltrami API",
    description="Numerical experiments on J-holomorphic disks and Kobayashi hyperbolicity",
    version=settings.tool_version,
    lifespan=lifespan
)

# CORS middleware
app.add_middleware(
    CORSMiddleware,
    allow_origins=settings.allowed_origins,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Malformed configs are schema errors, same as on the command line
@app.exception_handler(RequestValidationError)
async def schema_error_handler(request: Request, exc: RequestValidationError):
    return JSONResponse(
        status_code=400,
        content={"success": False, "error": "SchemaError", "detail": jsonable_errors(exc)},
    )

def jsonable_errors(exc: RequestValidationError):
    return [{"loc": list(e.get("loc", ())), "msg": e.get("msg", "")} for e in exc.errors()]

# Include routers
app.include_router(experiments.router, prefix="/api/experiments", tags=["experiments"])
app.include_router(structures.router, prefix="/api/structures", tags=["structures"])

@app.get("/")
async def root():
    return {"message": "Beltrami API - J-holomorphic disk experiments"}

@app.get("/health")
async def health_check():
    return {"status": "healthy", "version": settings.tool_version}

if __name__ == "__main__":
    uvicorn.run(
        "main:app",
        host="0.0.0.0",
        port=8000,
        reload=True
    )
