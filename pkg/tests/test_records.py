import pytest

from permsep.errors import ConfigError
from permsep.records import (
    Section,
    dump_records,
    find_all,
    find_section,
    parse_records,
    read_records,
    write_records,
)


def test_round_trip_preserves_order_and_values(tmp_path):
    sec_a = Section("alpha")
    sec_a.set("count", 3)
    sec_a.set("rate", 0.1)
    sec_a.set("names", ["x", "y", "z"])
    sec_b = Section("beta")
    sec_b.set("flag", True)
    path = tmp_path / "records.txt"
    write_records(path, [sec_a, sec_b])

    loaded = read_records(path)
    assert [s.name for s in loaded] == ["alpha", "beta"]
    assert loaded[0].get_int("count") == 3
    assert loaded[0].get_float("rate") == 0.1
    assert loaded[0].get_list("names") == ["x", "y", "z"]
    assert loaded[1].get_bool("flag") is True


def test_float_repr_round_trips_exactly(tmp_path):
    values = [1e-12, 0.30000000000000004, 2.0 / 3.0, 1e300]
    sec = Section("floats")
    sec.set("vals", values)
    loaded = parse_records(dump_records([sec]))
    assert loaded[0].get_floats("vals") == values


def test_dump_is_deterministic():
    sec = Section("s")
    sec.set("a", 1)
    sec.set("b", "two")
    assert dump_records([sec]) == dump_records([sec])
    assert dump_records([sec]) == "[s]\na = 1\nb = two\n"


def test_repeated_sections_and_find_all():
    text = "[sample]\nid = a\n\n[sample]\nid = b\n"
    sections = parse_records(text)
    samples = find_all(sections, "sample")
    assert [s.get("id") for s in samples] == ["a", "b"]
    with pytest.raises(ConfigError):
        find_section(sections, "missing")


def test_comments_and_blank_lines_ignored():
    text = "# header\n\n[s]\n# inline note\nk = v\n"
    sections = parse_records(text)
    assert sections[0].get("k") == "v"


def test_malformed_line_raises():
    with pytest.raises(ConfigError):
        parse_records("[s]\nno equals sign here\n")
    with pytest.raises(ConfigError):
        parse_records("key = before any section\n")


def test_missing_key_raises_with_section_name():
    sec = Section("trainer")
    with pytest.raises(ConfigError, match="trainer"):
        sec.get("absent")


def test_typed_defaults():
    sec = Section("s")
    assert sec.get_int("n", 7) == 7
    assert sec.get_float("x", 2.5) == 2.5
    assert sec.get_bool("b", False) is False
    assert sec.get("k", "fallback") == "fallback"


def test_bool_parsing_strict():
    sec = Section("s", {"b": "maybe"})
    with pytest.raises(ConfigError):
        sec.get_bool("b")


def test_empty_list_round_trip():
    sec = Section("s")
    sec.set("items", [])
    loaded = parse_records(dump_records([sec]))
    assert loaded[0].get_list("items") == []
