"""Case parsing, serialization, and validation."""

import dataclasses

import pytest

from warmflow import (Branch, Bus, GridCase, Load, MatpowerParseError,
                      SchemaError, ValidationError, parse_matpower,
                      parse_native, serialize_native, validate)
from warmflow.grid import bus_index, case_from_dict, case_to_dict, slack_position

from conftest import build_five_bus, build_two_bus


class TestMatpowerParse:
    def test_case14_shape(self, case14):
        assert case14.base_mva == 100.0
        assert len(case14.buses) == 14
        assert len(case14.branches) == 20
        assert len(case14.generators) == 5
        assert len(case14.loads) == 11

    def test_case14_bus_kinds(self, case14):
        kinds = [b.kind for b in case14.buses]
        assert kinds[0] == "slack"
        assert [b.id for b in case14.buses if b.kind == "pv"] == [2, 3, 6, 8]
        assert kinds.count("pq") == 9

    def test_per_unit_conversion(self, case14):
        # bus 2 load is 21.7 MW / 12.7 MVAr on a 100 MVA base
        ld = case14.loads[0]
        assert (ld.bus, ld.p, ld.q) == (2, 0.217, 0.127)
        # bus 9 carries a 19 MVAr shunt
        bus9 = next(b for b in case14.buses if b.id == 9)
        assert bus9.shunt_b == 0.19

    def test_branch_parameters(self, case14):
        br = case14.branches[0]
        assert (br.from_bus, br.to_bus) == (1, 2)
        assert (br.r, br.x, br.b_charging) == (0.01938, 0.05917, 0.0528)
        taps = {(b.from_bus, b.to_bus): b.tap_ratio
                for b in case14.branches if b.tap_ratio != 1.0}
        assert taps == {(4, 7): 0.978, (4, 9): 0.969, (5, 6): 0.932}

    def test_zero_loads_skipped(self, case14):
        load_buses = {ld.bus for ld in case14.loads}
        assert 7 not in load_buses
        assert 1 not in load_buses

    def test_case118_shape(self, case118):
        assert len(case118.buses) == 118
        assert len(case118.branches) == 186
        assert sum(1 for b in case118.buses if b.kind == "slack") == 1

    def test_missing_matrix_rejected(self):
        with pytest.raises(MatpowerParseError):
            parse_matpower("function mpc = broken\nmpc.baseMVA = 100;\n")

    def test_malformed_row_rejected(self, case14_path):
        text = case14_path.read_text().replace("0.01938", "oops", 1)
        with pytest.raises(MatpowerParseError):
            parse_matpower(text)


class TestNativeRoundtrip:
    def test_case14_roundtrip_equal(self, case14):
        again = parse_native(serialize_native(case14))
        assert again == case14

    def test_serialization_is_stable(self):
        case = build_five_bus()
        once = serialize_native(case)
        assert serialize_native(parse_native(once)) == once

    def test_notes_are_transient(self):
        # notes hold run diagnostics, not case data: dropped on serialize,
        # ignored by equality
        case = build_two_bus().with_notes("reduced k to 1")
        assert parse_native(serialize_native(case)).notes == ()
        assert case == build_two_bus()

    def test_dict_roundtrip(self, case14):
        assert case_from_dict(case_to_dict(case14)) == case14


class TestSchemaErrors:
    def test_not_json(self):
        with pytest.raises(SchemaError):
            parse_native("{nope")

    def test_unknown_field(self, two_bus):
        doc = case_to_dict(two_bus)
        doc["frequency"] = 60.0
        with pytest.raises(SchemaError, match="frequency"):
            case_from_dict(doc)

    def test_missing_field(self, two_bus):
        doc = case_to_dict(two_bus)
        del doc["buses"][0]["kind"]
        with pytest.raises(SchemaError, match="kind"):
            case_from_dict(doc)

    def test_wrong_type(self, two_bus):
        doc = case_to_dict(two_bus)
        doc["branches"][0]["r"] = "abc"
        with pytest.raises(SchemaError, match=r"\.r"):
            case_from_dict(doc)

    def test_invalid_case_rejected_on_parse(self, two_bus):
        doc = case_to_dict(two_bus)
        doc["buses"][1]["kind"] = "slack"  # second slack
        import json
        with pytest.raises(ValidationError, match="slack"):
            parse_native(json.dumps(doc))


class TestValidate:
    def test_valid_case_empty_diags(self, case14, case118):
        assert validate(case14) == []
        assert validate(case118) == []

    def _mutate(self, case: GridCase, **kw) -> GridCase:
        return dataclasses.replace(case, **kw)

    def test_duplicate_bus_id(self, two_bus):
        bad = self._mutate(two_bus, buses=two_bus.buses + (Bus(id=2, kind="pq"),))
        assert any("duplicate bus id 2" in d for d in validate(bad))

    def test_no_slack(self, two_bus):
        buses = (dataclasses.replace(two_bus.buses[0], kind="pq"),) + two_bus.buses[1:]
        assert any("slack" in d for d in validate(self._mutate(two_bus, buses=buses)))

    def test_dangling_branch(self, two_bus):
        bad = self._mutate(two_bus, branches=two_bus.branches + (
            Branch(from_bus=1, to_bus=99, r=0.0, x=0.1),))
        assert any("99 does not exist" in d for d in validate(bad))

    def test_zero_impedance(self, two_bus):
        bad = self._mutate(two_bus, branches=(
            Branch(from_bus=1, to_bus=2, r=0.0, x=0.0),))
        assert any("impedance" in d for d in validate(bad))

    def test_nonpositive_tap(self, two_bus):
        bad = self._mutate(two_bus, branches=(
            Branch(from_bus=1, to_bus=2, r=0.0, x=0.1, tap_ratio=0.0),))
        assert any("tap_ratio" in d for d in validate(bad))

    def test_disconnected_bus(self, ring6):
        branches = tuple(dataclasses.replace(br, in_service=False)
                         if 4 in (br.from_bus, br.to_bus) else br
                         for br in ring6.branches)
        diags = validate(dataclasses.replace(ring6, branches=branches))
        assert any("not connected" in d for d in diags)

    def test_load_on_missing_bus(self, two_bus):
        bad = self._mutate(two_bus, loads=(Load(bus=3, p=0.1, q=0.0),))
        assert any("bus does not exist" in d for d in validate(bad))


class TestHelpers:
    def test_bus_index(self, case14):
        idx = bus_index(case14)
        assert idx[1] == 0 and idx[14] == 13

    def test_slack_position(self, case14, five_bus):
        assert slack_position(case14) == 0
        assert slack_position(five_bus) == 0
