"""Entry point for ``python -m flakeloc``."""

from .cli.main import app

if __name__ == "__main__":
    app(prog_name="flakeloc")
