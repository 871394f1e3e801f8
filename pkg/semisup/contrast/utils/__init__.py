from typing import List


def split_list(value: str) -> List[str]:
    """
    Split a comma-separated config value, dropping blanks.
    """
    return [part.strip() for part in value.split(",") if part.strip()]
