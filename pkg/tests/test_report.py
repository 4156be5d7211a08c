"""Unit tests for evaluation report rendering."""

import csv
import tempfile
import unittest
from pathlib import Path

from edgeseg.metrics import MetricsReport
from edgeseg.report import build_report_rows, render_text, write_report


def _reports() -> list[MetricsReport]:
    return [
        MetricsReport("Case02", dice=0.8, hd95=3.0, msd=1.0, rvd=10.0),
        MetricsReport("Case01", dice=0.9, hd95=5.0, msd=2.0, rvd=-10.0),
        MetricsReport("Case03", dice=0.0, hd95=None, msd=None, rvd=-100.0),
    ]


class TestRows(unittest.TestCase):
    def test_sorted_with_summaries(self) -> None:
        rows = build_report_rows(_reports())
        self.assertEqual(rows[0], ["case", "dice", "hd95_mm", "msd_mm", "rvd_percent"])
        self.assertEqual([r[0] for r in rows[1:]], ["Case01", "Case02", "Case03", "mean", "std"])
        self.assertEqual(rows[1], ["Case01", "0.900000", "5.000000", "2.000000", "-10.000000"])

    def test_not_applicable_values(self) -> None:
        rows = build_report_rows(_reports())
        self.assertEqual(rows[3][2:4], ["n/a", "n/a"])

    def test_summaries_skip_missing_values(self) -> None:
        mean, std = build_report_rows(_reports())[-2:]
        self.assertEqual(mean[2], "4.000000")
        self.assertEqual(std[2], "1.000000")
        self.assertEqual(mean[1], "0.566667")
        self.assertEqual(mean[4], "-33.333333")

    def test_all_missing_column(self) -> None:
        rows = build_report_rows([MetricsReport("Case09", dice=1.0, hd95=None, msd=None, rvd=None)])
        self.assertEqual(rows[-2], ["mean", "1.000000", "n/a", "n/a", "n/a"])
        self.assertEqual(rows[-1], ["std", "0.000000", "n/a", "n/a", "n/a"])

    def test_no_cases(self) -> None:
        rows = build_report_rows([])
        self.assertEqual(rows[-1], ["std", "n/a", "n/a", "n/a", "n/a"])


class TestText(unittest.TestCase):
    def test_columns_aligned(self) -> None:
        lines = render_text(build_report_rows(_reports())).splitlines()
        self.assertTrue(lines[0].startswith("case"))
        self.assertEqual(set(lines[1].replace(" ", "")), {"-"})
        # right-aligned numbers end in the same column
        self.assertEqual(len(lines[2]), len(lines[3]))


class TestWrite(unittest.TestCase):
    def test_csv_and_text_files(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            csv_path, text_path = write_report(_reports(), Path(tmp) / "report.csv")
            self.assertEqual(text_path.name, "report.txt")
            with csv_path.open(newline="", encoding="utf-8") as f:
                rows = list(csv.reader(f))
            self.assertEqual(rows, build_report_rows(_reports()))
            self.assertIn("Case03", text_path.read_text(encoding="utf-8"))


if __name__ == "__main__":
    unittest.main()
