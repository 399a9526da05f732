"""
Observability and tracing with LangFuse.
Provides a decorator for CLI commands and a context manager for long pipeline
stages (bending, conformal surgery). Everything degrades to a no-op when
LangFuse is not configured.
"""

import os
import logging
from functools import wraps
from typing import Optional, Dict, Any

from src.utils import get_timestamp

logger = logging.getLogger(__name__)

# Global LangFuse client
_langfuse_client = None


def get_langfuse_client():
    """
    Get or create the global LangFuse client.
    Returns None if LangFuse is not configured (graceful degradation).
    """
    global _langfuse_client

    if os.getenv('ENABLE_OBSERVABILITY', 'false').lower() != 'true':
        return None

    if _langfuse_client is not None:
        return _langfuse_client

    public_key = os.getenv('LANGFUSE_PUBLIC_KEY')
    secret_key = os.getenv('LANGFUSE_SECRET_KEY')
    host = os.getenv('LANGFUSE_HOST', 'https://cloud.langfuse.com')

    if not public_key or not secret_key:
        logger.warning(
            "LangFuse not configured (missing LANGFUSE_PUBLIC_KEY or LANGFUSE_SECRET_KEY). "
            "Tracing disabled."
        )
        return None

    try:
        from langfuse import Langfuse

        _langfuse_client = Langfuse(
            public_key=public_key,
            secret_key=secret_key,
            host=host,
            debug=os.getenv('LANGFUSE_DEBUG', 'false').lower() == 'true'
        )
        logger.info(f"LangFuse client initialized (host: {host})")
        return _langfuse_client

    except ImportError:
        logger.warning("LangFuse library not installed. Tracing disabled.")
        return None
    except Exception as e:
        logger.error(f"Failed to initialize LangFuse: {e}")
        return None


def trace_command(command: str):
    """
    Decorator tracing one CLI command run.

    The wrapped function takes a RunConfig first and returns a
    (report: dict, exit_code: int) pair; the verdict and summary become the
    trace output.
    """
    def decorator(func):
        @wraps(func)
        def wrapper(config, *args, **kwargs):
            langfuse = get_langfuse_client()

            if langfuse is None:
                return func(config, *args, **kwargs)

            trace = langfuse.trace(
                name=f"curvcone_{command}",
                metadata={"timestamp": get_timestamp()},
                input=config.to_dict() if hasattr(config, 'to_dict') else str(config),
                tags=["curvcone", command],
            )
            try:
                report, code = func(config, *args, **kwargs)
                trace.update(
                    output={"verdict": report.get("verdict"), "summary": report.get("summary")},
                    level="DEFAULT" if code == 0 else "WARNING",
                    status_message=f"exit code {code}",
                )
                langfuse.flush()
                return report, code
            except Exception as e:
                trace.update(
                    output={"exception": str(e)},
                    level="ERROR",
                    status_message=f"{command} failed: {e}",
                )
                langfuse.flush()
                raise

        return wrapper
    return decorator


def flush_langfuse():
    """Manually flush all pending LangFuse events."""
    langfuse = get_langfuse_client()

    if langfuse:
        try:
            langfuse.flush()
        except Exception as e:
            logger.warning(f"Failed to flush LangFuse: {e}")


class StageTrace:
    """Context manager recording one pipeline stage as a LangFuse span."""

    def __init__(self, name: str, metadata: Optional[Dict[str, Any]] = None):
        self.name = name
        self.metadata = metadata or {}
        self.output: Dict[str, Any] = {}
        self.span = None
        self.langfuse = get_langfuse_client()

    def __enter__(self):
        if self.langfuse:
            try:
                self.span = self.langfuse.span(
                    name=self.name,
                    metadata={**self.metadata, "timestamp": get_timestamp()},
                )
            except Exception as e:
                logger.warning(f"Failed to open span {self.name}: {e}")
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if self.span:
            if exc_type:
                self.span.end(
                    output={"error": str(exc_val)},
                    level="ERROR",
                    status_message=f"Failed: {exc_val}",
                )
            else:
                self.span.end(output=self.output, level="DEFAULT")
            self.langfuse.flush()

        return False  # Don't suppress exceptions
