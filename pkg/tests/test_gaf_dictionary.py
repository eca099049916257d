"""Tokenizer, word partitioning, and the textual dictionary format."""

import re

import numpy as np
import pytest
from conftest import make_flow, req, resp
from hypothesis import given, settings
from hypothesis import strategies as st

from hmcd.errors import CorruptRecord, EmptyCorpus, FormatVersionMismatch
from hmcd.gaf.dictionary import (
    CLASS_BEN,
    CLASS_GRAY,
    CLASS_MAL,
    DELIMITERS,
    FIRST_WORD_ID,
    FieldVocab,
    OOV_ID,
    PAD_ID,
    WordEntry,
    build_dictionary,
    dictionary_hash,
    load_dictionary,
    message_fields,
    rejoin,
    save_dictionary,
    tokenize_content,
)
from hmcd.http.message import Label


def ua_flow(value, label, i=0, extra=()):
    """One-request flow whose User-Agent carries the words under test."""
    headers = [(b"Host", b"h.example"), (b"User-Agent", value)] + list(extra)
    return make_flow([req(headers=headers)], label=label, i=i)


class TestTokenize:
    def test_query_target(self):
        words, template = tokenize_content(b"jk?c=2&p=f4Z24")
        assert words == [b"jk", b"c", b"2", b"p", b"f4Z24"]
        assert template == [b"", b"?", b"=", b"&", b"=", b""]

    def test_empty(self):
        assert tokenize_content(b"") == ([], [b""])

    def test_leading_and_trailing_delimiters(self):
        words, template = tokenize_content(b"/a/b/")
        assert words == [b"a", b"b"]
        assert template == [b"/", b"/", b"/"]

    def test_all_delimiters(self):
        assert tokenize_content(b"??&& ") == ([], [b"??&& "])

    def test_delimiter_set(self):
        # each byte of the set splits; a non-member does not
        for d in b"?=&,;:/ ":
            words, _ = tokenize_content(b"a" + bytes([d]) + b"b")
            assert words == [b"a", b"b"], f"delimiter {chr(d)!r}"
        words, _ = tokenize_content(b"a-b.c")
        assert words == [b"a-b.c"]

    def test_template_one_longer_than_words(self):
        for content in (b"", b"x", b"/x", b"x/", b"a b c", b"//"):
            words, template = tokenize_content(content)
            assert len(template) == len(words) + 1

    def test_words_never_contain_delimiters(self):
        words, _ = tokenize_content(b"k1=v1&k2=v2; path=/x")
        for w in words:
            assert not (set(w) & set(DELIMITERS))


class TestRejoin:
    def test_exact_inverse(self):
        for content in (b"jk?c=2&p=f4Z24", b"/a/b/", b"", b"  x  ", b"a"):
            words, template = tokenize_content(content)
            assert rejoin(words, template) == content

    def test_prefix_suffix_pinned(self):
        assert rejoin([b"x"], [b"/", b""]) == b"/x"
        assert rejoin([b"x"], [b"", b"/"]) == b"x/"

    def test_fill_for_extra_words(self):
        # template provides one separator; the second gap uses the fill byte
        assert rejoin([b"a", b"b", b"c"], [b"", b"?", b""]) == b"a?b&c"
        assert rejoin([b"a", b"b"], [b"", b""], fill=b";") == b"a;b"

    def test_fewer_words_than_template(self):
        assert rejoin([b"a"], [b"", b"?", b"=", b""]) == b"a"
        assert rejoin([], [b"/pre", b"?", b"post"]) == b"/prepost"

    @settings(max_examples=200)
    @given(st.binary(max_size=60))
    def test_round_trip_random(self, content):
        words, template = tokenize_content(content)
        assert rejoin(words, template) == content
        assert len(template) == len(words) + 1


class TestMessageFields:
    def test_request(self):
        msg = req(
            target=b"/jk?c=2",
            headers=((b"Host", b"a.b"), (b"User-Agent", b"x")),
        )
        assert message_fields(msg) == [
            ("GET", b"/jk?c=2"),
            ("host", b"a.b"),
            ("user-agent", b"x"),
        ]

    def test_response(self):
        msg = resp(status=404, reason=b"Not Found", headers=((b"Server", b"s"),))
        assert message_fields(msg) == [("404", b"Not Found"), ("server", b"s")]

    def test_header_names_lowercased_values_untouched(self):
        msg = req(headers=((b"X-MiXeD", b"KeepCase"),))
        assert message_fields(msg) == [("GET", b"/"), ("x-mixed", b"KeepCase")]


# ---------------------------------------------------------------------------
# independent word-count oracle: regex split on the delimiter class, fields
# re-derived from the message dataclass without going through the module


def oracle_counts(flows):
    counts = {}
    for flow in flows:
        for msg in flow.messages:
            pairs = []
            if msg.is_request:
                if msg.method is not None:
                    pairs.append((msg.method.decode("latin-1"), msg.target or b""))
            elif msg.status_code is not None:
                pairs.append((str(msg.status_code), msg.reason or b""))
            for name, value in msg.headers:
                pairs.append((name.decode("latin-1").lower(), value))
            for fname, content in pairs:
                for w in re.split(rb"[?=&,;:/ ]+", content):
                    if w:
                        counts.setdefault(fname, {}).setdefault(w, 0)
                        counts[fname][w] += 1
    return counts


def oracle_partition(mal_flows, ben_flows, threshold):
    """field -> ordered [(word, freq, cls)] exactly as the builder should."""
    mc, bc = oracle_counts(mal_flows), oracle_counts(ben_flows)
    out = {}
    for fname in set(mc) | set(bc):
        rows = []
        for w in set(mc.get(fname, {})) | set(bc.get(fname, {})):
            m = mc.get(fname, {}).get(w, 0)
            b = bc.get(fname, {}).get(w, 0)
            if m and b:
                cls, freq = CLASS_GRAY, m + b
            elif m:
                cls, freq = CLASS_MAL, m
            else:
                cls, freq = CLASS_BEN, b
            if freq > threshold:
                rows.append((w, freq, cls))
        if rows:
            rows.sort(key=lambda t: (-t[1], t[0]))
            out[fname] = rows
    return out


class TestBuildDictionary:
    def test_partition_three_ways(self):
        mal = [ua_flow(b"evil shared", Label.MALICIOUS)]
        ben = [ua_flow(b"good shared", Label.BENIGN, i=1)]
        fd = build_dictionary(mal, ben, threshold=0)
        vocab = fd.vocab("user-agent")
        assert vocab.words[b"evil"].cls == CLASS_MAL
        assert vocab.words[b"good"].cls == CLASS_BEN
        assert vocab.words[b"shared"].cls == CLASS_GRAY
        assert vocab.words[b"shared"].freq == 2  # combined count

    def test_threshold_is_strict(self):
        # a word must appear strictly more than threshold times
        mal = [ua_flow(b"twice twice thrice thrice thrice", Label.MALICIOUS)]
        ben = [ua_flow(b"filler", Label.BENIGN, i=1)]
        fd = build_dictionary(mal, ben, threshold=2)
        vocab = fd.vocab("user-agent")
        assert b"thrice" in vocab.words
        assert b"twice" not in vocab.words

    def test_gray_threshold_uses_combined_count(self):
        mal = [ua_flow(b"both both solo solo", Label.MALICIOUS)]
        ben = [ua_flow(b"both", Label.BENIGN, i=1)]
        fd = build_dictionary(mal, ben, threshold=2)
        vocab = fd.vocab("user-agent")
        # both: 2 mal + 1 ben = 3 > 2; solo: 2 mal only, dropped
        assert vocab.words[b"both"].cls == CLASS_GRAY
        assert b"solo" not in vocab.words

    def test_huge_threshold_keeps_nothing(self):
        mal = [ua_flow(b"a b c", Label.MALICIOUS)]
        ben = [ua_flow(b"d e f", Label.BENIGN, i=1)]
        fd = build_dictionary(mal, ben, threshold=10**9)
        assert fd.fields == {}

    def test_id_assignment_order(self):
        # frequency descending, then word ascending; ids start at 2
        mal = [ua_flow(b"top top top bbb aaa", Label.MALICIOUS)]
        ben = [ua_flow(b"zzz", Label.BENIGN, i=1)]
        fd = build_dictionary(mal, ben, threshold=0)
        vocab = fd.vocab("user-agent")
        assert PAD_ID == 0 and OOV_ID == 1 and FIRST_WORD_ID == 2
        assert vocab.words[b"top"].ident == 2
        assert vocab.words[b"aaa"].ident == 3
        assert vocab.words[b"bbb"].ident == 4
        assert vocab.id_of(b"nope") == OOV_ID
        assert vocab.word_of(4) == b"bbb"
        assert vocab.word_of(99) is None

    def test_size_is_one_past_max_id(self):
        mal = [ua_flow(b"x y", Label.MALICIOUS)]
        ben = [ua_flow(b"z", Label.BENIGN, i=1)]
        fd = build_dictionary(mal, ben, threshold=0)
        assert fd.vocab("user-agent").size() == 5  # ids 2..4
        assert FieldVocab().size() == FIRST_WORD_ID

    def test_by_class_and_mal_words(self):
        mal = [ua_flow(b"e2 e1 shared", Label.MALICIOUS)]
        ben = [ua_flow(b"g1 shared", Label.BENIGN, i=1)]
        fd = build_dictionary(mal, ben, threshold=0)
        vocab = fd.vocab("user-agent")
        assert set(vocab.by_class(CLASS_MAL)) == {b"e1", b"e2"}
        assert set(vocab.by_class(CLASS_BEN)) == {b"g1"}
        assert set(vocab.by_class(CLASS_GRAY)) == {b"shared"}
        assert vocab.mal_words() == [b"e1", b"e2"]  # sorted

    def test_start_line_fields(self):
        mal = [make_flow([req(target=b"/gate.php?id=7", method=b"POST")], Label.MALICIOUS)]
        ben = [make_flow([resp(status=200, reason=b"OK")], Label.BENIGN, i=1)]
        fd = build_dictionary(mal, ben, threshold=0)
        assert set(fd.vocab("POST").words) == {b"gate.php", b"id", b"7"}
        assert set(fd.vocab("200").words) == {b"OK"}

    def test_empty_corpus_raises(self):
        flows = [ua_flow(b"x", Label.MALICIOUS)]
        with pytest.raises(EmptyCorpus):
            build_dictionary([], flows)
        with pytest.raises(EmptyCorpus):
            build_dictionary(flows, [])

    def test_negative_threshold(self):
        flows = [ua_flow(b"x", Label.MALICIOUS)]
        with pytest.raises(ValueError):
            build_dictionary(flows, flows, threshold=-1)

    def test_rebuild_and_order_invariance(self):
        mal = [ua_flow(b"a b", Label.MALICIOUS, i=i) for i in range(4)]
        ben = [ua_flow(b"c d", Label.BENIGN, i=i + 4) for i in range(4)]
        h1 = dictionary_hash(build_dictionary(mal, ben, threshold=1))
        h2 = dictionary_hash(build_dictionary(mal[::-1], ben[::-1], threshold=1))
        assert h1 == h2

    def test_random_corpora_match_oracle(self):
        rng = np.random.default_rng(1234)
        pool = [b"w%02d" % i for i in range(12)]
        delims = [b"?", b"=", b"&", b" ", b"/"]
        header_names = [b"User-Agent", b"Cookie", b"Accept"]

        def random_flow(i, label):
            msgs = []
            for _ in range(rng.integers(1, 4)):
                target = b"/" + rejoin(
                    [pool[k] for k in rng.integers(0, len(pool), rng.integers(1, 5))],
                    [b""],
                    fill=delims[rng.integers(0, len(delims))],
                )
                headers = [(b"Host", b"h")]
                for name in header_names:
                    if rng.random() < 0.7:
                        value = rejoin(
                            [pool[k] for k in rng.integers(0, len(pool), rng.integers(0, 4))],
                            [b""],
                            fill=b" ",
                        )
                        headers.append((name, value))
                msgs.append(req(target=target, headers=headers))
            return make_flow(msgs, label=label, i=i, flow_id=f"r-{i:06d}")

        for trial in range(30):
            mal = [random_flow(i, Label.MALICIOUS) for i in range(rng.integers(1, 6))]
            ben = [random_flow(i + 10, Label.BENIGN) for i in range(rng.integers(1, 6))]
            threshold = int(rng.integers(0, 4))
            fd = build_dictionary(mal, ben, threshold=threshold)
            expect = oracle_partition(mal, ben, threshold)
            assert set(fd.fields) == set(expect), f"trial {trial}"
            for fname, rows in expect.items():
                vocab = fd.vocab(fname)
                got = sorted(
                    ((e.ident, w, e.freq, e.cls) for w, e in vocab.words.items())
                )
                want = [
                    (FIRST_WORD_ID + k, w, freq, cls)
                    for k, (w, freq, cls) in enumerate(rows)
                ]
                assert got == want, f"trial {trial} field {fname}"


class TestPersistence:
    @pytest.fixture
    def built(self):
        mal = [
            ua_flow(b"evil shared", Label.MALICIOUS, extra=((b"X-Odd", b"a\tb\xff%"),)),
            ua_flow(b"evil", Label.MALICIOUS, i=1),
        ]
        ben = [ua_flow(b"good shared", Label.BENIGN, i=2)]
        return build_dictionary(mal, ben, threshold=0)

    def test_round_trip(self, built, tmp_path):
        path = tmp_path / "dict.txt"
        save_dictionary(built, path)
        loaded = load_dictionary(path)
        assert loaded.threshold == built.threshold
        assert set(loaded.fields) == set(built.fields)
        for fname, vocab in built.fields.items():
            assert loaded.fields[fname].words == vocab.words

    def test_escaping_in_file(self, built, tmp_path):
        path = tmp_path / "dict.txt"
        save_dictionary(built, path)
        text = path.read_text()
        assert "a%09b%FF%25" in text
        assert load_dictionary(path).vocab("x-odd").words[b"a\tb\xff%"].cls == CLASS_MAL

    def test_hash_survives_round_trip_and_ignores_meta(self, built, tmp_path):
        want = dictionary_hash(built)
        plain, tagged = tmp_path / "a.txt", tmp_path / "b.txt"
        save_dictionary(built, plain)
        save_dictionary(built, tagged, meta={"note": "does not affect the hash"})
        assert plain.read_text() != tagged.read_text()
        assert dictionary_hash(load_dictionary(plain)) == want
        assert dictionary_hash(load_dictionary(tagged)) == want

    def test_meta_comment(self, built, tmp_path):
        path = tmp_path / "dict.txt"
        save_dictionary(built, path, meta={"source": "unit"})
        lines = path.read_text().splitlines()
        assert lines[2] == '# meta {"source": "unit"}'
        assert load_dictionary(path).fields == built.fields

    def test_wrong_format_line(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("# other-format v1\n# threshold 5\n")
        with pytest.raises(FormatVersionMismatch):
            load_dictionary(path)
        path.write_text("")
        with pytest.raises(FormatVersionMismatch):
            load_dictionary(path)

    def test_missing_threshold(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("# hmcd-dictionary v1\n\n[ua]\nword\t2\t6\tmal\n")
        with pytest.raises(FormatVersionMismatch, match="threshold"):
            load_dictionary(path)

    def test_corrupt_lines(self, tmp_path):
        head = "# hmcd-dictionary v1\n# threshold 5\n\n[ua]\n"
        cases = [
            ("evil\t2\t6", 5),            # missing class column
            ("evil\t2\t6\tweird", 5),     # unknown class
            ("evil\tx\t6\tmal", 5),       # non-integer id
        ]
        for text, line in cases:
            path = tmp_path / "bad.txt"
            path.write_text(head + text + "\n")
            with pytest.raises(CorruptRecord) as exc:
                load_dictionary(path)
            assert exc.value.line == line, text

    def test_word_before_any_section(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("# hmcd-dictionary v1\n# threshold 5\nevil\t2\t6\tmal\n")
        with pytest.raises(CorruptRecord) as exc:
            load_dictionary(path)
        assert exc.value.line == 3

    def test_hash_distinguishes_content(self, built):
        other = build_dictionary(
            [ua_flow(b"evil", Label.MALICIOUS)],
            [ua_flow(b"good", Label.BENIGN, i=1)],
            threshold=0,
        )
        assert dictionary_hash(built) != dictionary_hash(other)
