import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from faitheval import (
    AttributionVector,
    InvalidInput,
    MetricRow,
    Modality,
    build_report,
    histogram,
    input_group_influence,
    modality_influence,
    pearson_matrix,
)
from faitheval.analysis import CorrelationMatrix
from faitheval.attribution import ModalAttribution
from tests.conftest import load_fixture


def rows_from(columns):
    n = len(next(iter(columns.values())))
    out = []
    for i in range(n):
        out.append(
            MetricRow(
                example_id=f"e{i}",
                **{name: values[i] for name, values in columns.items()},
            )
        )
    return out


class TestHistogram:
    def test_identical_scores_one_bucket(self):
        h = histogram([0.42] * 7)
        assert h.counts[8] == 7
        assert h.total == 7

    def test_empty_input(self):
        h = histogram([])
        assert h.counts == (0,) * 20
        assert h.total == 0

    def test_edge_arithmetic(self):
        h = histogram([0.0, 0.049, 0.051, 1.0])
        assert h.counts[0] == 2
        assert h.counts[1] == 1
        assert h.counts[19] == 1
        assert h.total == 4

    def test_right_open_buckets(self):
        h = histogram([0.05])
        assert h.counts[1] == 1  # 0.05 opens the second bucket

    def test_bucket_count_validation(self):
        with pytest.raises(InvalidInput):
            histogram([0.5], n_buckets=0)

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidInput):
            histogram([float("nan")])

    @given(st.lists(st.floats(0, 1, allow_nan=False), max_size=200))
    def test_counts_conserve_sample_size(self, scores):
        assert histogram(scores).total == len(scores)

    def test_out_of_range_clamped_to_end_buckets(self):
        h = histogram([-0.5, 1.5])
        assert h.counts[0] == 1 and h.counts[19] == 1


class TestPearson:
    def test_self_correlation_is_exactly_one(self):
        rows = rows_from({"sf_nlp": [0.1, 0.5, 0.9], "comp_nlp": [0.3, 0.2, 0.8]})
        matrix = pearson_matrix(rows, ["sf_nlp", "comp_nlp"])
        assert matrix.entry("sf_nlp", "sf_nlp") == 1.0

    def test_five_point_hand_dataset(self):
        xs = [1.0, 2.0, 4.0, 5.0, 8.0]
        ys = [2.0, 3.0, 5.0, 4.0, 11.0]
        rows = rows_from({"suff_nlp": xs, "comp_nlp": ys})
        got = pearson_matrix(rows, ["suff_nlp", "comp_nlp"]).entry("suff_nlp", "comp_nlp")
        # brute-force formula evaluated directly
        mx, my = sum(xs) / 5, sum(ys) / 5
        num = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
        den = (sum((x - mx) ** 2 for x in xs) * sum((y - my) ** 2 for y in ys)) ** 0.5
        assert got == pytest.approx(num / den, abs=1e-12)

    def test_constant_column_marked_not_nan(self):
        rows = rows_from({"sf_nlp": [0.5, 0.5, 0.5], "comp_nlp": [0.1, 0.2, 0.3]})
        matrix = pearson_matrix(rows, ["sf_nlp", "comp_nlp"])
        assert matrix.entry("sf_nlp", "comp_nlp") is None
        assert matrix.entry("sf_nlp", "sf_nlp") is None

    def test_needs_two_rows(self):
        with pytest.raises(InvalidInput):
            pearson_matrix(rows_from({"sf_nlp": [0.5]}))

    def test_missing_values_use_pairwise_complete_rows(self):
        rows = rows_from(
            {"sf_nlp": [0.1, 0.4, 0.9, 0.2], "suff_img": [0.2, None, 0.8, None]}
        )
        matrix = pearson_matrix(rows, ["sf_nlp", "suff_img"])
        expected = np.corrcoef([0.1, 0.9], [0.2, 0.8])[0, 1]
        assert matrix.entry("sf_nlp", "suff_img") == pytest.approx(expected, abs=1e-12)

    def test_scale_and_shift_invariance(self):
        rng = np.random.default_rng(2)
        xs = rng.normal(0, 1, 40)
        ys = rng.normal(0, 1, 40)
        for a, b in ((2.5, 1.0), (-3.0, 0.2), (0.004, -9.0)):
            rows = rows_from({"suff_nlp": list(a * xs + b), "comp_nlp": list(ys)})
            got = pearson_matrix(rows, ["suff_nlp", "comp_nlp"]).entry("suff_nlp", "comp_nlp")
            base = pearson_matrix(
                rows_from({"suff_nlp": list(xs), "comp_nlp": list(ys)}),
                ["suff_nlp", "comp_nlp"],
            ).entry("suff_nlp", "comp_nlp")
            assert abs(got - np.sign(a) * base) <= 1e-9

    def test_symmetry(self):
        rng = np.random.default_rng(3)
        rows = rows_from(
            {
                "sf_nlp": list(rng.uniform(0, 1, 10)),
                "suff_nlp": list(rng.uniform(-1, 1, 10)),
                "comp_nlp": list(rng.uniform(-1, 1, 10)),
            }
        )
        matrix = pearson_matrix(rows)
        for a in matrix.names:
            for b in matrix.names:
                assert matrix.entry(a, b) == matrix.entry(b, a)


class TestReferenceCorrelationFixture:
    def test_read_back(self):
        doc = load_fixture("correlation_reference.json")
        matrix = CorrelationMatrix(tuple(doc["names"]), tuple(tuple(r) for r in doc["matrix"]))
        for name in matrix.names:
            assert matrix.entry(name, name) == 1.0
        assert matrix.entry("sf_nlp", "sf_overall") == pytest.approx(0.815, abs=1e-12)
        assert matrix.entry("sf_img", "sf_overall") == pytest.approx(0.590, abs=1e-12)


class TestInfluence:
    def test_empty_vector_sums_to_zero(self):
        attr = ModalAttribution(
            language=AttributionVector(Modality.LANGUAGE, (), []), vision=None
        )
        totals = modality_influence(attr)
        assert totals["language"] == 0.0
        assert totals["vision"] is None

    def test_hand_sum(self):
        attr = ModalAttribution(
            language=AttributionVector(Modality.LANGUAGE, (0, 1, 2), [0.2, -0.5, 0.4]),
            vision=None,
        )
        assert modality_influence(attr)["language"] == pytest.approx(0.1, abs=1e-12)

    def test_negation_flips_totals(self):
        values = np.array([0.3, -0.7, 1.1])
        plus = ModalAttribution(
            language=AttributionVector(Modality.LANGUAGE, (0, 1, 2), values), vision=None
        )
        minus = ModalAttribution(
            language=AttributionVector(Modality.LANGUAGE, (0, 1, 2), -values), vision=None
        )
        assert modality_influence(plus)["language"] == -modality_influence(minus)["language"]


class TestGroupInfluence:
    def vector(self):
        return AttributionVector(Modality.LANGUAGE, (0, 1, 2, 3), [0.5, -0.25, 1.0, 2.0])

    def test_single_group_covering_everything(self):
        totals = input_group_influence(self.vector(), {"all": [0, 1, 2, 3]})
        assert totals["all"] == pytest.approx(3.25, abs=1e-12)
        assert totals["other"] == 0.0

    def test_disjoint_groups_sum_to_total(self):
        totals = input_group_influence(
            self.vector(), {"taskmodule": [0, 1], "extra_question": [2, 3]}
        )
        assert totals["taskmodule"] == pytest.approx(0.25, abs=1e-12)
        assert totals["extra_question"] == pytest.approx(3.0, abs=1e-12)
        assert sum(totals.values()) == pytest.approx(3.25, abs=1e-12)

    def test_residual_other(self):
        totals = input_group_influence(self.vector(), {"head": [0]})
        assert totals["other"] == pytest.approx(2.75, abs=1e-12)

    def test_overlap_rejected(self):
        with pytest.raises(InvalidInput):
            input_group_influence(self.vector(), {"a": [0, 1], "b": [1, 2]})

    def test_unknown_ids_rejected(self):
        with pytest.raises(InvalidInput):
            input_group_influence(self.vector(), {"a": [99]})

    def test_other_name_reserved(self):
        with pytest.raises(InvalidInput):
            input_group_influence(self.vector(), {"other": [0]})


class TestReport:
    def make_rows(self, n=12):
        rng = np.random.default_rng(4)
        return [
            MetricRow.from_scores(
                f"e{i:03d}",
                sf_nlp=float(rng.uniform(0, 1)),
                sf_img=float(rng.uniform(0, 1)),
                suff_nlp=float(rng.uniform(-0.3, 0.3)),
                comp_nlp=float(rng.uniform(-0.3, 0.3)),
                suff_img=float(rng.uniform(-0.3, 0.3)),
                comp_img=float(rng.uniform(-0.3, 0.3)),
            )
            for i in range(n)
        ]

    def test_report_validates_against_schema(self):
        jsonschema = pytest.importorskip("jsonschema")
        from faitheval.analysis import ANALYSIS_REPORT_SCHEMA

        influence = [
            {"id": "e000", "target": "answer", "language": 0.4, "vision": -0.1},
            {"id": "e000", "target": "explanation", "language": 1.4, "vision": None},
        ]
        report = build_report(self.make_rows(), influence_records=influence)
        jsonschema.validate(report, ANALYSIS_REPORT_SCHEMA)
        # document stays valid through a JSON round trip
        jsonschema.validate(json.loads(json.dumps(report)), ANALYSIS_REPORT_SCHEMA)

    def test_histogram_counts_conserved(self):
        rows = self.make_rows(30)
        report = build_report(rows)
        for column, h in report["histograms"].items():
            assert sum(h["counts"]) == 30

    def test_correlation_block_is_symmetric_unit_diagonal(self):
        report = build_report(self.make_rows())
        names = report["correlation"]["names"]
        matrix = report["correlation"]["matrix"]
        for i in range(len(names)):
            assert matrix[i][i] == 1.0
            for k in range(len(names)):
                assert matrix[i][k] == matrix[k][i]

    def test_influence_sorted_by_example_id(self):
        influence = [
            {"id": "e002", "target": "answer", "language": 1.0, "vision": 0.0},
            {"id": "e001", "target": "answer", "language": 2.0, "vision": 0.0},
        ]
        report = build_report(self.make_rows(), influence_records=influence)
        ids = [rec["id"] for rec in report["influence"]["per_example"]]
        assert ids == sorted(ids)
