"""Allow ``python -m homindex`` to behave like the installed entry point."""

from .cli import main

if __name__ == "__main__":
    main()
