from importlib.metadata import version, PackageNotFoundError
from importlib import resources
from pathlib import Path
from typing import Tuple

import functools
import hashlib
import logging
import asyncio
import os
import tempfile

import tomli
import tomli_w
import oyaml as yaml
import bitmath

from genmix.internal.errors import ConfigError


def get_genmix_logger():
    logger_l = logging.getLogger(__name__)
    logger_l.setLevel(logging.INFO)
    if not logger_l.hasHandlers():
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter('%(levelname)s: %(message)s'))
        logger_l.addHandler(handler)
    return logger_l


class GenMixLogger(logging.Logger):
    LOG_STORE = {}
    SUCCESS_LEVEL_NUM = 25
    logging.addLevelName(SUCCESS_LEVEL_NUM, "SUCCESS")

    def success(self, message, *args, **kws):
        self.log(self.SUCCESS_LEVEL_NUM, message, *args, **kws)

    def dynamic(self, log_level, message):
        log_level = getattr(logging, log_level, logging.INFO)
        self.log(log_level, message)

    def append_log(self, log_key, log_level, message):
        self.LOG_STORE.setdefault(log_key, [])
        self.LOG_STORE[log_key].append(message)
        self.dynamic(log_level, message)

    def pop(self, log_key):
        return self.LOG_STORE.pop(log_key, [])


logging.setLoggerClass(GenMixLogger)
logger = get_genmix_logger()


def log_on_success(func):
    @functools.wraps(func)
    async def async_wrapper(*args, **kwargs):
        result = await func(*args, **kwargs)
        return _log_result(func, result)

    @functools.wraps(func)
    def sync_wrapper(*args, **kwargs):
        result = func(*args, **kwargs)
        return _log_result(func, result)

    if asyncio.iscoroutinefunction(func):
        return async_wrapper
    return sync_wrapper


def _log_result(func, result):
    # (value, message) tuples log the message and hand back the value
    if isinstance(result, tuple) and len(result) == 2:
        value, log_message = result
        logger.success(log_message)
        return value
    if result is None:
        logger.success(f"{func.__name__} completed with None result.")
        return None
    logger.success(result)
    return result


def is_packaged_version():
    try:
        _ = version('genmix')
        return True
    except PackageNotFoundError:
        return False


def _split_file_from_path(path: str) -> Tuple[str, str]:
    parts = path.split(".")
    file_name = '.'.join(parts[-2::])
    dot_separated_file_path = '.'.join(parts[0:-2])
    return dot_separated_file_path, file_name


def _read_data(dotted_path: str, file_name: str):
    return resources.files(dotted_path).joinpath(file_name).read_text(
        encoding="utf-8")


def read_from_package_if_needed(read_method):

    @functools.wraps(read_method)
    def wrapper(self, path, *args, is_packaged=False, **kwargs):
        if not is_packaged:
            return read_method(self, path, *args, is_packaged=False, **kwargs)

        file_path, file_name = _split_file_from_path(str(path))
        data = _read_data(file_path, file_name)
        if read_method.__name__ == "read_toml":
            return tomli.loads(data)
        if read_method.__name__ == "read_yaml":
            return yaml.safe_load(data)
        return data.splitlines()

    return wrapper


class ConfigReadWrite:

    @read_from_package_if_needed
    def read_toml(self, path, is_packaged=False):
        try:
            with open(path, "rb") as f:
                return tomli.load(f)
        except tomli.TOMLDecodeError as e:
            raise ConfigError(f"Invalid config file {path}: {e}")

    @read_from_package_if_needed
    def read_yaml(self, path, is_packaged=False):
        with open(path, 'r', encoding='utf-8') as f:
            return yaml.safe_load(f)

    def write_toml(self, path, content):
        atomic_write_bytes(path, tomli_w.dumps(content).encode("utf-8"))

    def write_yaml(self, path, content):
        text = yaml.dump(content, default_flow_style=False)
        atomic_write_bytes(path, text.encode("utf-8"))

    def write_lines(self, path, lines):
        atomic_write_bytes(path, "".join(f"{line}\n" for line in lines).encode("utf-8"))


def convert_to_bytes(size_string) -> int:
    if str(size_string).isnumeric():
        return int(size_string)

    size = bitmath.parse_string(size_string)
    return int(size.to_Byte())


def format_bytes(num_bytes: int) -> str:
    return bitmath.Byte(num_bytes).best_prefix().format("{value:.1f} {unit}")


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def atomic_write_bytes(path, payload: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def build_identifier() -> str:
    # git-style id without needing a checkout: version + hash of the sources
    from genmix import __version__
    package_dir = Path(__file__).resolve().parent.parent
    digest = hashlib.sha256()
    for source in sorted(package_dir.rglob("*.py")):
        digest.update(source.relative_to(package_dir).as_posix().encode())
        digest.update(source.read_bytes())
    pkg_version = version('genmix') if is_packaged_version() else __version__
    return f"genmix-{pkg_version}+{digest.hexdigest()[:12]}"
