import re

WORD = re.compile(r"[a-z']+")


def tokens(text):
    return WORD.findall(text.lower())


def long_words(text, min_length):
    return [word for word in tokens(text) if len(word) >= min_length]
