from textstats.counter import top_words


def summarize(counts, limit=3):
    total = sum(counts.values())
    top = ", ".join(word + "=" + str(count) for word, count in top_words(counts, limit))
    return "words=" + str(total) + " unique=" + str(len(counts)) + " top: " + top


def is_varied(counts, ratio=2):
    return len(counts) * ratio > sum(counts.values())
