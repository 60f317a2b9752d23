import logging
import os
import re
from pathlib import Path
from shutil import rmtree
from uuid import uuid4
import unittest
from unittest.mock import patch

import pytest

from unit import TEST_DATA_DIR
from tashkeel.utils import log


class TestGetConsoleHandler(unittest.TestCase):
    handler = log.get_console_handler()

    def test_stream_handler_returned(self):
        self.assertIsInstance(self.handler, logging.StreamHandler)

    def test_formatter_correctly_set(self):
        self.assertEqual(
            self.handler.formatter._fmt,
            "%(asctime)s [%(module)s] %(levelname)s: %(message)s",
        )


class TestSetFileHandler(unittest.TestCase):
    def setUp(self):
        self.log_dir = os.path.join(TEST_DATA_DIR, uuid4().hex)
        self.logger = log.get_logger(
            f"tashkeel_{uuid4().hex}", log_level=logging.INFO
        )
        log.set_file_handler(self.logger, self.log_dir)

    def tearDown(self):
        log.remove_file_handlers(self.logger)
        rmtree(self.log_dir)

    def test_file_handler_correctly_set(self):
        file_handler = [
            x
            for x in self.logger.handlers
            if isinstance(x, logging.FileHandler)
        ]

        with self.subTest("one file handler"):
            self.assertEqual(len(file_handler), 1)

        with self.subTest("correct format"):
            self.assertEqual(
                file_handler[0].formatter._fmt,
                "%(asctime)s [%(module)s] %(levelname)s: %(message)s",
            )

        with self.subTest("written to the run directory"):
            self.assertEqual(
                file_handler[0].baseFilename,
                os.path.abspath(os.path.join(self.log_dir, "tashkeel.log")),
            )

    def test_log_file_correctly_written_to(self):
        self.logger.info("testing")

        with open(os.path.join(self.log_dir, "tashkeel.log")) as fh:
            log_contents = fh.read()

        self.assertIn("INFO: testing", log_contents)

    def test_setting_file_twice_returns_the_handler(self):
        with patch(
            "tashkeel.utils.log.check_write_permission_to_log_dir"
        ) as mock_check:
            # early return => no permission check
            log.set_file_handler(self.logger, self.log_dir)

            self.assertEqual(mock_check.call_count, 0)

    def test_remove_file_handlers_keeps_console(self):
        log.remove_file_handlers(self.logger)

        self.assertEqual(
            [type(x) for x in self.logger.handlers], [logging.StreamHandler]
        )


class TestCheckWritePermissionToLogDir(unittest.TestCase):
    def test_valid_existing_path_with_permission_does_not_raise_error(self):
        log.check_write_permission_to_log_dir(TEST_DATA_DIR)

    def test_missing_dir_with_valid_parent_dir_does_not_raise_error(self):
        test_log_dir = os.path.join(
            TEST_DATA_DIR, "sub_directory_that_does_not_exist_yet"
        )

        log.check_write_permission_to_log_dir(test_log_dir)

        self.assertFalse(os.path.exists(test_log_dir))

    @patch("tashkeel.utils.log.os.access", return_value=False)
    def test_dir_with_no_write_permission_raises_permission_error(
        self, mock_access
    ):
        expected_error = (
            f"Path to provided log directory {TEST_DATA_DIR} does not appear"
            " to have write permission for current user"
        )

        with pytest.raises(PermissionError, match=re.escape(expected_error)):
            log.check_write_permission_to_log_dir(TEST_DATA_DIR)

    @patch("tashkeel.utils.log.os.access", return_value=False)
    def test_missing_dir_with_parent_dir_no_write_permission_raises_error(
        self, mock_access
    ):
        test_log_dir = "/sub_directory_that_does_not_exist_yet"

        expected_error = (
            "Path to provided log directory / does not appear to"
            " have write permission for current user"
        )

        with pytest.raises(PermissionError, match=expected_error):
            log.check_write_permission_to_log_dir(test_log_dir)

        mock_access.assert_called_once_with(Path("/"), os.W_OK)


class TestGetLogger(unittest.TestCase):
    def test_existing_logger_returned_when_already_exists(self):
        # create new logger with a random name that won't already exist
        random_log = uuid4().hex

        logger = log.get_logger(logger_name=random_log, log_level=logging.INFO)

        # try create the same logger again, test we return early by checking
        # for calls to add the handler
        with patch(
            "tashkeel.utils.log.logging.Logger.addHandler"
        ) as mock_handle:
            same_logger = log.get_logger(
                logger_name=random_log, log_level=logging.INFO
            )

            self.assertEqual(mock_handle.call_count, 0)

        self.assertIs(logger, same_logger)

    def test_log_level_set(self):
        logger = log.get_logger(uuid4().hex, log_level="DEBUG")

        self.assertEqual(logger.level, logging.DEBUG)
