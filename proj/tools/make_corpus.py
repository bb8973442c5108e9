# SPDX-License-Identifier: Apache-2.0
"""Regenerate data/corpus.txt, the bundled training text.

The corpus is synthetic word salad with English-like statistics: a Zipf-weighted
vocabulary of pronounceable words, short sentences, paragraph breaks. Only
random.Random(SEED).random() drives the draws, so the byte stream is stable
across Python versions and platforms.
"""

import pathlib
import random

SEED = 715
TARGET_BYTES = 1_200_000

ONSETS = ["b", "br", "c", "cl", "d", "dr", "f", "fl", "g", "gr", "h", "j", "k",
          "l", "m", "n", "p", "pl", "pr", "qu", "r", "s", "sh", "sl", "sp",
          "st", "str", "t", "th", "tr", "v", "w"]
VOWELS = ["a", "e", "i", "o", "u", "ai", "ea", "ee", "oa", "ou"]
CODAS = ["", "", "b", "ck", "d", "ft", "g", "l", "ll", "m", "n", "nd", "ng",
         "nt", "p", "r", "rd", "rn", "s", "st", "t", "th"]

FUNCTION_WORDS = ["the", "of", "and", "to", "a", "in", "that", "it", "was",
                  "for", "on", "as", "with", "his", "they", "at", "be", "this",
                  "from", "or", "had", "by", "but", "some", "what", "there",
                  "we", "can", "out", "other", "were", "all", "your", "when",
                  "up", "use", "how", "said", "an", "each", "she", "which",
                  "do", "their", "if", "will", "way", "about", "many", "then"]


def pick(r, seq):
    return seq[int(r.random() * len(seq)) % len(seq)]


def make_word(r):
    syllables = 1 + int(r.random() * 3)  # 1..3
    parts = []
    for _ in range(syllables):
        parts.append(pick(r, ONSETS) + pick(r, VOWELS))
    return "".join(parts) + pick(r, CODAS)


def make_vocab(r, size):
    words = []
    seen = set(FUNCTION_WORDS)
    while len(words) < size:
        w = make_word(r)
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def zipf_cdf(n):
    weights = [1.0 / (k + 1.0) for k in range(n)]
    total = sum(weights)
    cdf = []
    acc = 0.0
    for w in weights:
        acc += w / total
        cdf.append(acc)
    return cdf


def pick_zipf(r, vocab, cdf):
    x = r.random()
    lo, hi = 0, len(cdf) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if cdf[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return vocab[lo]


def make_sentence(r, vocab, cdf):
    count = 6 + int(r.random() * 9)  # 6..14 words
    words = []
    for i in range(count):
        if r.random() < 0.42:
            words.append(pick(r, FUNCTION_WORDS))
        else:
            words.append(pick_zipf(r, vocab, cdf))
        if 0 < i < count - 1 and r.random() < 0.08:
            words[-1] += ","
    words[0] = words[0][0].upper() + words[0][1:]
    end = "?" if r.random() < 0.06 else "."
    return " ".join(words) + end


def main():
    r = random.Random(SEED)
    vocab = make_vocab(r, 800)
    cdf = zipf_cdf(len(vocab))
    chunks = []
    size = 0
    while size < TARGET_BYTES:
        sentences = 3 + int(r.random() * 5)  # 3..7 per paragraph
        para = " ".join(make_sentence(r, vocab, cdf) for _ in range(sentences))
        chunks.append(para)
        size += len(para) + 2
    text = "\n\n".join(chunks) + "\n"
    out = pathlib.Path(__file__).resolve().parent.parent / "data" / "corpus.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(text.encode("ascii"))
    print(f"wrote {out} ({len(text)} bytes)")


if __name__ == "__main__":
    main()
