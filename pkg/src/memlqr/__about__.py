__title__ = "memlqr"
__version__ = "0.3.0"
