"""ml-1m parsing, labeling, context derivation, and split behavior."""

import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from verbrec import data
from verbrec.errors import (
    BadRatios,
    DuplicateItemId,
    InvalidCode,
    MalformedLine,
    RatingOutOfRange,
    UnknownReference,
)


def write(tmp_path, name, text, encoding="latin-1"):
    p = tmp_path / name
    p.write_text(text, encoding=encoding)
    return p


class TestParseUsers:
    def test_first_ml1m_record(self, tmp_path):
        p = write(tmp_path, "users.dat", "1::F::1::10::48067\n")
        assert data.parse_users(p) == [data.RawUser(1, "F", 1, 10, "48067")]

    def test_empty_file(self, tmp_path):
        p = write(tmp_path, "users.dat", "")
        assert data.parse_users(p) == []

    def test_non_numeric_id(self, tmp_path):
        p = write(tmp_path, "users.dat", "x::F::1::10::48067\n")
        with pytest.raises(MalformedLine):
            data.parse_users(p)

    def test_wrong_field_count(self, tmp_path):
        p = write(tmp_path, "users.dat", "1::F::1::10\n")
        with pytest.raises(MalformedLine):
            data.parse_users(p)

    def test_bad_age_code(self, tmp_path):
        p = write(tmp_path, "users.dat", "1::F::20::10::48067\n")
        with pytest.raises(InvalidCode):
            data.parse_users(p)

    def test_bad_occupation_code(self, tmp_path):
        p = write(tmp_path, "users.dat", "1::F::1::21::48067\n")
        with pytest.raises(InvalidCode):
            data.parse_users(p)

    def test_order_preserved(self, tmp_path):
        p = write(tmp_path, "users.dat", "2::M::25::0::10001\n1::F::1::10::48067\n")
        assert [u.user_id for u in data.parse_users(p)] == [2, 1]


class TestParseItems:
    def test_first_ml1m_record(self, tmp_path):
        p = write(tmp_path, "movies.dat", "1::Toy Story (1995)::Animation|Children's|Comedy\n")
        (item,) = data.parse_items(p)
        assert item == data.RawItem(1, "Toy Story", 1995, ("Animation", "Children's", "Comedy"))

    def test_yearless_title_kept_verbatim(self, tmp_path):
        p = write(tmp_path, "movies.dat", "7::Mystery Film::Drama\n")
        (item,) = data.parse_items(p)
        assert item.title == "Mystery Film"
        assert item.release_year is None

    def test_empty_file(self, tmp_path):
        p = write(tmp_path, "movies.dat", "")
        assert data.parse_items(p) == []

    def test_duplicate_item_id(self, tmp_path):
        p = write(tmp_path, "movies.dat", "1::A (2000)::Drama\n1::B (2001)::Comedy\n")
        with pytest.raises(DuplicateItemId):
            data.parse_items(p)

    def test_latin1_title(self, tmp_path):
        p = write(tmp_path, "movies.dat", "5::Les Misérables (1995)::Drama\n")
        (item,) = data.parse_items(p)
        assert item.title == "Les Misérables"

    def test_genres_deduplicated(self, tmp_path):
        p = write(tmp_path, "movies.dat", "9::X (1990)::Drama|Drama|Comedy\n")
        (item,) = data.parse_items(p)
        assert item.genres == ("Drama", "Comedy")


class TestParseRatings:
    def test_first_ml1m_record(self, tmp_path):
        p = write(tmp_path, "ratings.dat", "1::1193::5::978300760\n")
        assert data.parse_ratings(p) == [data.RawInteraction(1, 1193, 5, 978300760)]

    def test_rating_out_of_range(self, tmp_path):
        p = write(tmp_path, "ratings.dat", "1::1193::6::978300760\n")
        with pytest.raises(RatingOutOfRange):
            data.parse_ratings(p)

    def test_empty_file(self, tmp_path):
        p = write(tmp_path, "ratings.dat", "")
        assert data.parse_ratings(p) == []

    def test_malformed(self, tmp_path):
        p = write(tmp_path, "ratings.dat", "1::1193::five::978300760\n")
        with pytest.raises(MalformedLine):
            data.parse_ratings(p)


class TestRoundTrip:
    def test_users_round_trip(self, tmp_path):
        p = write(tmp_path, "users.dat", "1::F::1::10::48067\n2::M::56::16::70072\n")
        users = data.parse_users(p)
        p2 = write(tmp_path, "users2.dat", "".join(data.format_user(u) + "\n" for u in users))
        assert data.parse_users(p2) == users

    def test_items_round_trip(self, tmp_path):
        lines = (
            "1::Toy Story (1995)::Animation|Children's|Comedy\n"
            "7::Mystery Film::Drama\n"
            "9::No Genre Movie (1999)::\n"
        )
        p = write(tmp_path, "movies.dat", lines)
        items = data.parse_items(p)
        p2 = write(tmp_path, "movies2.dat", "".join(data.format_item(i) + "\n" for i in items))
        assert data.parse_items(p2) == items

    def test_ratings_round_trip(self, tmp_path):
        p = write(tmp_path, "ratings.dat", "1::1193::5::978300760\n1::661::3::978302109\n")
        ratings = data.parse_ratings(p)
        p2 = write(tmp_path, "r2.dat", "".join(data.format_rating(r) + "\n" for r in ratings))
        assert data.parse_ratings(p2) == ratings


class TestBinarize:
    @pytest.mark.parametrize("rating,expected", [(5, 1), (4, 1), (3, 0), (1, 0)])
    def test_threshold_boundary(self, rating, expected):
        assert data.binarize_label(rating) == expected

    def test_out_of_range(self):
        with pytest.raises(RatingOutOfRange):
            data.binarize_label(0)
        with pytest.raises(RatingOutOfRange):
            data.binarize_label(6)

    def test_custom_threshold(self):
        assert data.binarize_label(3, threshold=3) == 1
        assert data.binarize_label(2, threshold=3) == 0


class TestDeriveContext:
    def test_epoch(self):
        ctx = data.derive_context(0)
        assert ctx == data.ContextFields(0, "Thursday", "late-night")

    def test_one_day_later(self):
        assert data.derive_context(86400) == data.ContextFields(0, "Friday", "late-night")

    def test_against_calendar_oracle(self):
        # independent oracle: time.gmtime instead of datetime
        for ts in (978300760, 956703932, 1046454590, 12345678):
            ctx = data.derive_context(ts)
            g = time.gmtime(ts)
            assert ctx.hour_of_day == g.tm_hour
            assert ctx.day_of_week == data.WEEKDAYS[g.tm_wday]

    @pytest.mark.parametrize(
        "hour,daypart",
        [(0, "late-night"), (5, "late-night"), (6, "morning"), (11, "morning"),
         (12, "afternoon"), (17, "afternoon"), (18, "evening"), (23, "evening")],
    )
    def test_daypart_bands(self, hour, daypart):
        assert data.derive_context(hour * 3600).daypart == daypart

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            data.derive_context(-1)


def _make_examples(n):
    return [
        data.LabeledExample(
            user_id=i % 7 + 1,
            item_id=i % 5 + 1,
            context=data.derive_context(i * 3600),
            label=i % 2,
            original_rating=4 if i % 2 else 2,
        )
        for i in range(n)
    ]


class TestSplit:
    def test_floor_allocation(self):
        split = data.split_dataset(_make_examples(10), (0.8, 0.1, 0.1), seed=3)
        assert (len(split.train), len(split.valid), len(split.test)) == (8, 1, 1)

    def test_same_seed_identical(self):
        ex = _make_examples(50)
        a = data.split_dataset(ex, (0.8, 0.1, 0.1), seed=11)
        b = data.split_dataset(ex, (0.8, 0.1, 0.1), seed=11)
        assert a.train == b.train and a.valid == b.valid and a.test == b.test

    def test_bad_ratios(self):
        with pytest.raises(BadRatios):
            data.split_dataset(_make_examples(10), (0.7, 0.1, 0.1), seed=0)
        with pytest.raises(BadRatios):
            data.split_dataset(_make_examples(10), (1.0, -0.1, 0.1), seed=0)

    @settings(max_examples=30, deadline=None)
    @given(n=st.integers(1, 200), seed=st.integers(0, 2**31))
    def test_partition_property(self, n, seed):
        ex = _make_examples(n)
        split = data.split_dataset(ex, (0.6, 0.2, 0.2), seed=seed)
        combined = split.train + split.valid + split.test
        assert len(combined) == n
        assert sorted(map(id, combined)) == sorted(map(id, ex))


class TestBuildExamples:
    def test_join_and_label(self):
        users = [data.RawUser(1, "F", 1, 10, "48067")]
        items = [data.RawItem(1193, "One Flew Over the Cuckoo's Nest", 1975, ("Drama",))]
        ratings = [data.RawInteraction(1, 1193, 5, 978300760)]
        (ex,) = data.build_examples(users, items, ratings)
        assert ex.label == 1 and ex.original_rating == 5
        assert ex.label == data.binarize_label(ex.original_rating)

    def test_unknown_user(self):
        items = [data.RawItem(1, "A", 2000, ("Drama",))]
        with pytest.raises(UnknownReference):
            data.build_examples([], items, [data.RawInteraction(9, 1, 4, 0)])

    def test_unknown_item(self):
        users = [data.RawUser(1, "F", 1, 10, "48067")]
        with pytest.raises(UnknownReference):
            data.build_examples(users, [], [data.RawInteraction(1, 9, 4, 0)])
