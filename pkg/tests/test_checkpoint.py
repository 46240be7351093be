import struct
import tempfile
from pathlib import Path
from unittest import TestCase

import numpy as np

from frostfactor.checkpoint import read_container, write_container
from frostfactor.errors import InputError


class ContainerTestCase(TestCase):
    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.path = Path(self.directory.name) / "model.ckpt"
        self.arrays = {
            "factors": np.arange(6, dtype=np.float32).reshape(2, 3),
            "ids": np.array([3, 1, 2], dtype=np.int32),
            "empty": np.zeros((0, 4)),
        }
        write_container(self.path, b"TEST", 2, {"k": 3, "name": "x"}, self.arrays)

    def tearDown(self):
        self.directory.cleanup()

    def test_preamble(self):
        magic, version, _ = struct.unpack_from("<4sII", self.path.read_bytes())
        self.assertEqual(magic, b"TEST")
        self.assertEqual(version, 2)

    def test_read(self):
        header, arrays = read_container(self.path, b"TEST", 2)
        self.assertEqual(header, {"k": 3, "name": "x"})
        self.assertEqual(list(arrays), ["factors", "ids", "empty"])
        self.assertEqual(arrays["factors"].dtype, np.float64)
        self.assertEqual(arrays["ids"].dtype, np.int64)
        np.testing.assert_array_equal(arrays["factors"], self.arrays["factors"])
        np.testing.assert_array_equal(arrays["ids"], [3, 1, 2])
        self.assertEqual(arrays["empty"].shape, (0, 4))

        arrays["ids"][0] = 7
        self.assertEqual(arrays["ids"][0], 7)

    def test_wrong_magic_or_version(self):
        with self.assertRaises(InputError):
            read_container(self.path, b"ELSE", 2)
        with self.assertRaises(InputError):
            read_container(self.path, b"TEST", 1)

    def test_truncated(self):
        data = self.path.read_bytes()
        self.path.write_bytes(data[:-8])
        with self.assertRaises(InputError):
            read_container(self.path, b"TEST", 2)
        self.path.write_bytes(data[:5])
        with self.assertRaises(InputError):
            read_container(self.path, b"TEST", 2)
