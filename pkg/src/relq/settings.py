"""
The Settings class handles the configuration settings that are provided in a [`YAML`](http://yaml.org) file.

Settings are grouped, e.g. all numerical thresholds live in the group ``Tolerances`` and the
defaults of the simulation experiments in the group ``Analysis``. By default, settings are loaded
from the file ``settings.yaml`` that is located in the same directory as this module.

The intended use is as follows:

    from relq.settings import Settings

    tolerances = Settings.load("Tolerances")

    if cond > tolerances.CONDITION_LIMIT:
        raise RejectedSubsetError("M_mm is numerically singular")

The returned object is and behaves also like a dictionary, so you can check if a parameter is
defined with ``"CONDITION_LIMIT" in tolerances``.

Site or user specific values are taken from the YAML file named by the environment variable
``RELQ_CONFIG``. Groups in that file are merged recursively over the packaged defaults, so a file
containing only

    Tolerances:
        CONDITION_LIMIT: 1e10

changes that single threshold and keeps all the others.

Most code does not use Settings directly but asks for a `Tolerances` record from `relq.config`.
"""

from __future__ import annotations

import logging
import os
import re
from pathlib import Path

import yaml  # This module is provided by the pip package PyYaml - pip install pyyaml

from relq.system import AttributeDict
from relq.system import recursive_dict_update

logger = logging.getLogger(__name__)

ENV_RELQ_CONFIG = "RELQ_CONFIG"
DEFAULT_LOCATION = Path(__file__).resolve().parent


class SettingsError(Exception):
    pass


class SafeLoader(yaml.SafeLoader):
    """YAML 1.1 reads ``1e-12`` as a string, this loader also accepts floats without a dot."""


SafeLoader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(
        r"""^(?:
            [-+]?[0-9][0-9_]*\.[0-9_]*(?:[eE][-+]?[0-9]+)?
           |[-+]?[0-9][0-9_]*[eE][-+]?[0-9]+
           |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
           |[-+]?\.(?:inf|Inf|INF)
           |\.(?:nan|NaN|NAN)
        )$""",
        re.X,
    ),
    list("-+0123456789."),
)


def _as_groups(document: dict, label: str | None = None) -> AttributeDict:
    return AttributeDict(
        {name: AttributeDict(value, label=name) if isinstance(value, dict) else value for name, value in document.items()},
        label=label,
    )


class Settings:
    """
    Loads the groups of the packaged ``settings.yaml`` and merges the local settings over them.
    Parsed files are cached by their path.
    """

    _cache: dict[str, object] = {}

    LOG_FORMAT_FULL = "%(asctime)23s:%(levelname)8s:%(lineno)5d:%(name)-20s: %(message)s"

    @classmethod
    def read_configuration_file(cls, filename: str | Path, *, force: bool = False):
        """
        Returns the parsed YAML document, reading the file only when it is not cached yet or
        when ``force`` is set. A missing file raises FileNotFoundError.
        """
        key = str(filename)

        if force or key not in cls._cache:
            logger.debug(f"Parsing YAML configuration file {key}.")
            text = Path(key).read_text()
            try:
                cls._cache[key] = yaml.load(text, Loader=SafeLoader)
            except yaml.YAMLError as exc:
                logger.error(exc)
                raise SettingsError(f"Error loading YAML document {key}") from exc

        return cls._cache[key]

    @classmethod
    def load_local_settings(cls, *, force: bool = False) -> AttributeDict:
        """
        Returns the groups from the file named by ``RELQ_CONFIG``. Without the variable, or with
        an empty file, there are no local settings.

        Raises:
            SettingsError: when the file does not exist or does not contain groups.
        """
        location = os.environ.get(ENV_RELQ_CONFIG)

        if not location:
            logger.debug(f"The environment variable {ENV_RELQ_CONFIG} is not defined.")
            return AttributeDict()

        logger.debug(f"Using {ENV_RELQ_CONFIG}={location} to update the default settings.")

        try:
            document = cls.read_configuration_file(location, force=force)
        except FileNotFoundError as exc:
            raise SettingsError(
                f"Local settings YAML file '{location}' not found. Check your environment variable {ENV_RELQ_CONFIG}."
            ) from exc

        if document is None:
            logger.warning(f"Local settings YAML file '{location}' is empty. No local settings were loaded.")
            return AttributeDict()

        if not isinstance(document, dict):
            raise SettingsError(f"Local settings YAML file '{location}' does not contain groups.")

        return AttributeDict(document, label=location)

    @classmethod
    def load(
        cls,
        group_name: str | None = None,
        filename: str = "settings.yaml",
        location: str | Path | None = None,
        *,
        force: bool = False,
        add_local_settings: bool = True,
    ) -> AttributeDict:
        """
        Returns one group of the settings file, or all groups when no group name is given.

        The file is looked up in ``location``, by default the directory of this module. Unless
        ``add_local_settings`` is False, the groups from ``RELQ_CONFIG`` are merged over the result.

        Raises:
            SettingsError: when the file is missing or empty, or the group is not defined.
        """
        directory = DEFAULT_LOCATION if location is None else Path(location).resolve()

        try:
            document = cls.read_configuration_file(directory / filename, force=force)
        except FileNotFoundError as exc:
            raise SettingsError(f"Filename {filename} not found at location {directory}.") from exc

        if not document:
            raise SettingsError(f"Empty YAML document {filename} at {directory}.")

        local = cls.load_local_settings(force=force) if add_local_settings else AttributeDict()

        if not group_name:
            settings = _as_groups(document, label=filename)
            return recursive_dict_update(settings, local)

        if group_name not in document:
            raise SettingsError(f"Group name '{group_name}' is not defined in the YAML document '{filename}' at '{directory}'.")

        if not document[group_name]:
            raise SettingsError(f"Empty group {group_name} in YAML document {filename} at {directory}.")

        group = AttributeDict(document[group_name], label=group_name)

        return recursive_dict_update(group, local.get(group_name) or {})


if __name__ == "__main__":

    # python -m relq.settings [--local]

    import argparse

    from rich import print

    logging.basicConfig(level=logging.INFO, format=Settings.LOG_FORMAT_FULL)

    parser = argparse.ArgumentParser(description=f"Print the effective settings, including {ENV_RELQ_CONFIG}.")
    parser.add_argument("--local", action="store_true", help="print only the local settings.")
    args = parser.parse_args()

    if not args.local:
        print(Settings.load())
    elif os.environ.get(ENV_RELQ_CONFIG):
        print(Settings.load_local_settings())
    else:
        print("[red]No local settings defined.")
