import sys

from colorama import Fore

from textstats.counter import word_counts
from textstats.summary import summarize

SAMPLE = "the quick brown fox jumps over the lazy dog and the end"


def main():
    text = " ".join(sys.argv[1:]) or SAMPLE
    counts = word_counts(text)
    print(Fore.GREEN + summarize(counts) + Fore.RESET)


if __name__ == "__main__":
    main()
