try:
    from ._version import __version__
except ImportError:
    from importlib.metadata import PackageNotFoundError, version

    try:
        __version__ = version("envmix")
    except PackageNotFoundError:
        __version__ = "unknown"

__all__ = ["__version__"]
