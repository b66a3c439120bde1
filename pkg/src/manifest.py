import configparser
import os
from typing import Dict, Iterable, Mapping, Optional

from src.utils import exclusive_lock


class Manifest:
    """
    Simple experiment manifest using a configuration file to store and retrieve values.

    One .cfg per experiment under the manifests directory records the resolved
    config, seeds, artifact paths and bundle modes.
    """

    def __init__(self, manifest_dir="manifests", name="run"):
        self.manifest_dir = manifest_dir
        self.config_file = os.path.join(self.manifest_dir, f"{name}.cfg")
        self.config, _ = self.ensure_manifest()

    def ensure_manifest(self):
        """
        Ensures that the manifest directory exists and loads the file if present.

        Returns:
            tuple: The configuration parser object and the manifest path.
        """
        if not os.path.exists(self.manifest_dir):
            os.makedirs(self.manifest_dir)

        config = configparser.ConfigParser(interpolation=None)
        config.optionxform = str.lower

        if os.path.exists(self.config_file):
            config.read(self.config_file, encoding="utf-8")

        return config, self.config_file

    def exists(self) -> bool:
        return os.path.exists(self.config_file)

    def get(self, section, param_name, fallback=None) -> Optional[str]:
        """
        Args:
            section (str): The name of the section.
            param_name (str): The name of the parameter to retrieve.

        Returns:
            str: The value of the parameter, or fallback if not found.
        """
        section = str(section)
        if section in self.config.sections():
            return self.config.get(section, param_name, fallback=fallback)
        return fallback

    def section(self, section) -> Dict[str, str]:
        section = str(section)
        return dict(self.config.items(section)) if section in self.config.sections() else {}

    def sections(self) -> Iterable[str]:
        return self.config.sections()

    def set(self, section, param_name, param_value, save=True):
        """
        Sets a value, creating the section when needed.

        Args:
            section (str): The name of the section.
            param_name (str): The name of the parameter to set.
            param_value: The value to set, stored as its string form.
            save (bool): Write the file immediately.
        """
        section = str(section)
        if section not in self.config.sections():
            self.config.add_section(section)
        self.config.set(section, param_name, str(param_value))
        if save:
            self.save()

    def update(self, section, values: Mapping[str, object]):
        for key, value in values.items():
            self.set(section, key, value, save=False)
        self.save()

    def merge_parser(self, parser: configparser.ConfigParser, prefix="config"):
        """Copy every section of parser under '<prefix>:<section>'."""
        for section in parser.sections():
            self.update(f"{prefix}:{section}", dict(parser.items(section, raw=True)))

    def config_parser(self, prefix="config") -> configparser.ConfigParser:
        """Inverse of merge_parser."""
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str.lower
        for section in self.config.sections():
            if section.startswith(f"{prefix}:"):
                parser[section[len(prefix) + 1:]] = dict(self.config.items(section))
        return parser

    def save(self):
        with exclusive_lock(self.config_file):
            temp_file = f"{self.config_file}.tmp"
            with open(temp_file, "w", encoding="utf-8") as configfile:
                self.config.write(configfile)
            os.replace(temp_file, self.config_file)
