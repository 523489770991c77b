"""Resident profile store kept as a JSON list."""

import json
import logging
from pathlib import Path

from pydantic import TypeAdapter, ValidationError

from app.core.exceptions import DuplicateId, MalformedProfileFile
from app.models.schemas import ResidentProfile
from app.utils.io import atomic_write_text

logger = logging.getLogger(__name__)

_PROFILES = TypeAdapter(list[ResidentProfile])


def parse_profiles(text: str) -> list[ResidentProfile]:
    """
    Parse profile store contents.

    Raises:
        MalformedProfileFile: Not JSON, or a profile fails validation
        DuplicateId: Two profiles share a person id
    """
    try:
        profiles = _PROFILES.validate_json(text)
    except ValidationError as e:
        raise MalformedProfileFile(f"Invalid profile store: {e.error_count()} error(s), first: {e.errors()[0]['msg']}")
    seen: set[str] = set()
    for profile in profiles:
        if profile.person_id in seen:
            raise DuplicateId(profile.person_id)
        seen.add(profile.person_id)
    return profiles


def format_profiles(profiles: list[ResidentProfile]) -> str:
    seen: set[str] = set()
    for profile in profiles:
        if profile.person_id in seen:
            raise DuplicateId(profile.person_id)
        seen.add(profile.person_id)
    return json.dumps([p.model_dump(mode="json") for p in profiles], indent=2) + "\n"


def profile_store_load(path: str | Path) -> list[ResidentProfile]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise MalformedProfileFile(f"Cannot read profile store {path}: {e}")
    profiles = parse_profiles(text)
    logger.info("Loaded profiles", extra={"path": str(path), "profiles": len(profiles)})
    return profiles


def profile_store_save(path: str | Path, profiles: list[ResidentProfile]) -> None:
    atomic_write_text(path, format_profiles(profiles))
    logger.info("Saved profiles", extra={"path": str(path), "profiles": len(profiles)})
