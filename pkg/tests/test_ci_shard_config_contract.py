import fnmatch
import re
import unittest
from pathlib import Path


class CIShardConfigContractTests(unittest.TestCase):
    def setUp(self) -> None:
        self.repo_root = Path(__file__).resolve().parents[1]
        self.workflow = (self.repo_root / ".github" / "workflows" / "ci.yml").read_text(encoding="utf-8")

    def _shard_patterns(self) -> list[str]:
        patterns: list[str] = []
        for shard in re.findall(r'^\s*- "(test_[^"]+)"$', self.workflow, flags=re.MULTILINE):
            patterns.extend(shard.split(","))
        patterns.extend(re.findall(r'ci_run_unittest_shard\.sh "(test_[^"$]+)"', self.workflow))
        return patterns

    def test_every_test_file_belongs_to_a_shard(self) -> None:
        patterns = self._shard_patterns()
        self.assertTrue(patterns)
        unassigned = [
            path.name
            for path in sorted((self.repo_root / "tests").glob("test_*.py"))
            if not any(fnmatch.fnmatch(path.name, pattern) for pattern in patterns)
        ]
        self.assertEqual(unassigned, [])

    def test_fast_shards_skip_learning_runs(self) -> None:
        self.assertIn('python-version: ["3.10", "3.11", "3.12"]', self.workflow)
        self.assertIn('HISTOFUSE_SKIP_SLOW: "1"', self.workflow)
        self.assertIn("python -m compileall -q histofuse tests scripts", self.workflow)
        self.assertIn('ci_run_unittest_shard.sh "test_learning.py"', self.workflow)


if __name__ == "__main__":
    unittest.main()
