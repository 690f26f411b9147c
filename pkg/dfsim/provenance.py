import functools
import importlib.metadata
import logging
import pathlib
import typing

import git

logger = logging.getLogger(__name__)

DISTRIBUTION_NAME = "dfsim"


class SourceRepo:
    """The `git` checkout the simulator is running from, if any"""

    def __init__(self, path: typing.Optional[pathlib.Path] = None):
        """
        Args:
            path: Where to start looking for the repo; defaults to this package
        """
        self.path = path or pathlib.Path(__file__).parent

    @functools.cached_property
    def repo(self) -> typing.Optional[git.Repo]:
        """The repo, or `None` when not running from a checkout"""
        try:
            return git.Repo(self.path, search_parent_directories=True)
        # Installed packages and source tarballs have no repo to find
        except (git.InvalidGitRepositoryError, git.NoSuchPathError):
            return None

    @property
    def revision(self) -> typing.Optional[str]:
        """The checked-out commit, or `None` without a repo or any commits"""
        if self.repo is None:
            return None

        try:
            return self.repo.head.commit.hexsha
        except ValueError:
            # A fresh repo without commits
            return None

    @property
    def dirty(self) -> bool:
        """Are there uncommitted changes to tracked files?"""
        return self.repo is not None and self.repo.is_dirty(untracked_files=False)


def package_version() -> typing.Optional[str]:
    try:
        return importlib.metadata.version(DISTRIBUTION_NAME)
    except importlib.metadata.PackageNotFoundError:
        return None


def provenance(repo: typing.Optional[SourceRepo] = None) -> dict[str, typing.Any]:
    """What produced a set of results: the package version and source revision"""
    repo = repo or SourceRepo()
    details = {
        "version": package_version(),
        "source_revision": repo.revision,
        "dirty": repo.dirty,
    }
    logger.debug("Provenance: %s", details)
    return details
