"""Offline stand-in for the colorama distribution."""

__version__ = "0.4.6"


class Fore:
    RED = ""
    GREEN = ""
    RESET = ""


def init(autoreset=False):
    return None
