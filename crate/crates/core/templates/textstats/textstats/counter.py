from collections import Counter

from textstats.tokenize import tokens


def word_counts(text):
    return Counter(tokens(text))


def top_words(counts, limit):
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    return ranked[:limit]


def singletons(counts):
    return sorted(word for word, count in counts.items() if count == 1)
