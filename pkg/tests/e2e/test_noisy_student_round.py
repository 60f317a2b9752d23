"""
End to end tests for one Noisy-Student round on the rule language.

A teacher is trained on a small gold corpus, 2k unlabeled skeletons are
pseudo labelled and combined with the gold corpus to train the student.
Teacher and student are scored on the same held out sentences, over 3
seeds the median student DER must stay within 0.5% of the teacher's.
"""

import os
import unittest

from e2e.helper import (
    checkpoint_der,
    cleanup_local_test_files,
    corpus_vocab,
    desk_config,
    make_test_dir,
    median_over_seeds,
    synthetic_corpus,
    train_diacritizer,
)
from tashkeel.utils.io import write_labeled_corpus, write_lines
from tashkeel.utils.noisy_student import NsRoundSpec, run_ns_round
from tashkeel.utils.utils import filter_config, train_config


class TestNoisyStudentRound(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.test_dir = make_test_dir()
        cls.test = synthetic_corpus(500, seed=41)
        cls.results = {}

        for seed in (0, 1, 2):
            cls.results[seed] = cls.run_round(seed)

    @classmethod
    def tearDownClass(cls):
        cleanup_local_test_files(cls.test_dir)

    @classmethod
    def run_round(cls, seed) -> dict:
        seed_dir = os.path.join(cls.test_dir, f"seed_{seed}")
        gold = synthetic_corpus(500, seed=100 + seed)
        unlabeled = synthetic_corpus(2000, seed=200 + seed)
        vocab = corpus_vocab(gold, unlabeled)

        teacher_dir = os.path.join(seed_dir, "teacher")
        train_diacritizer(
            "eo", gold, vocab, teacher_dir, max_epochs=30, seed=seed
        )
        teacher = os.path.join(teacher_dir, "checkpoints", "best")

        labeled = os.path.join(seed_dir, "gold.tsv")
        write_labeled_corpus(labeled, gold)
        unlabeled_file = os.path.join(seed_dir, "unlabeled.txt")
        write_lines(unlabeled_file, [x.letters for x in unlabeled])

        config = desk_config("train_student", max_epochs=10, seed=seed)
        student, report = run_ns_round(
            NsRoundSpec(
                teacher_checkpoint=teacher,
                unlabeled_source=unlabeled_file,
                combine_with=labeled,
                sample_size=2000,
                filters=filter_config(config),
                seed=seed,
            ),
            train_config(config),
            os.path.join(seed_dir, "student"),
        )

        return {
            "teacher_der": checkpoint_der(teacher, cls.test),
            "student_der": checkpoint_der(student, cls.test),
            "report": report,
        }

    def test_student_not_worse_than_teacher(self):
        teacher = median_over_seeds(lambda x: self.results[x]["teacher_der"])
        student = median_over_seeds(lambda x: self.results[x]["student_der"])

        self.assertLessEqual(student, teacher + 0.005)

    def test_every_unlabeled_line_pseudo_labelled(self):
        for seed, result in self.results.items():
            with self.subTest(seed=seed):
                self.assertEqual(
                    result["report"]["stages"]["pseudo_labeled"], 2000
                )

    def test_combined_corpus_holds_gold_and_pseudo_records(self):
        for seed, result in self.results.items():
            with self.subTest(seed=seed):
                self.assertGreater(
                    result["report"]["stages"]["combined_kept"], 2000
                )
