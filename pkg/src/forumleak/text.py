"""Tokenising, stopword removal and a naive suffix-stripping stemmer."""

import re

TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

ENGLISH_STOPWORDS = frozenset("""
a about above after again against all am an and any are aren't as at be because been before
being below between both but by can cannot could did do does doing don't down during each few
for from further had has have having he her here hers herself him himself his how i if in into
is isn't it its itself just let me more most my myself no nor not now of off on once only or
other ought our ours ourselves out over own same she should so some such than that the their
theirs them themselves then there these they this those through to too under until up very was
we were what when where which while who whom why will with would you your yours yourself
yourselves also get got im ive dont u ur pls plz
""".split())

GERMAN_STOPWORDS = frozenset("""
aber alle allem allen aller alles als also am an ander andere anderem anderen anderer anderes
auch auf aus bei bin bis bist da damit dann das dass dein deine dem den der des dich die dir
doch dort du durch ein eine einem einen einer eines er es etwas euch euer eure für gegen habe
haben hat hatte hier hin hinter ich ihm ihn ihnen ihr ihre im in indem ins ist jede jedem jeden
jeder jedes jetzt kann kein keine man manche mein meine mich mir mit muss nach nicht nichts noch
nun nur ob oder ohne sehr sein seine sich sie sind so solche soll sondern um und uns unser unter
viel vom von vor war waren warum was weil welche wenn wer werde werden wie wieder will wir wird
wo zu zum zur über
""".split())

STOPWORDS = {
    "english": ENGLISH_STOPWORDS,
    "german": GERMAN_STOPWORDS,
    "english+german": ENGLISH_STOPWORDS | GERMAN_STOPWORDS,
    "none": frozenset(),
}

# (suffix, replacement), tried longest first
_SUFFIXES = {
    "english": [("ingly", ""), ("edly", ""), ("ies", "y"), ("ing", ""), ("ed", ""), ("es", ""),
                ("ly", ""), ("s", "")],
    "german": [("ungen", ""), ("ung", ""), ("heit", ""), ("keit", ""), ("ern", ""), ("em", ""),
               ("en", ""), ("er", ""), ("es", ""), ("e", ""), ("n", ""), ("s", "")],
}
MIN_STEM = 3


def tokenize(text: str) -> list:
    return TOKEN_RE.findall(text.lower())


def naive_stem(word: str, language: str = "english") -> str:
    """Strip the first matching inflectional suffix, keeping at least three characters."""
    if word.isdigit():
        return word
    for suffix, repl in _SUFFIXES.get(language, ()):
        if word.endswith(suffix) and len(word) - len(suffix) + len(repl) >= MIN_STEM:
            if suffix == "s" and word.endswith("ss"):
                continue
            return word[: len(word) - len(suffix)] + repl
    return word


def get_stemmer(name: str):
    """Stemmer by id: ``english``, ``german`` or ``none``."""
    if name == "none":
        return lambda w: w
    if name not in _SUFFIXES:
        raise ValueError(f"unknown stemmer {name!r}")
    return lambda w: naive_stem(w, name)


def analyze(text: str, stopwords=ENGLISH_STOPWORDS, stemmer=None) -> list:
    stem = stemmer or (lambda w: naive_stem(w, "english"))
    return [stem(t) for t in tokenize(text) if t not in stopwords]
