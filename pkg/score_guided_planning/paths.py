import os


def get_project_root() -> str:
    """
    Get the project root directory.

    Returns:
        str: Path to the project root directory
    """
    current_dir = os.path.dirname(os.path.abspath(__file__))
    return os.path.dirname(current_dir)


def get_default_output_dir() -> str:
    """
    Get the default experiment output directory.

    ``SGP_OUTPUT_DIR`` (environment or ``.env``) overrides the
    ``<project root>/runs`` default.

    Returns:
        str: Path to the default output directory
    """
    return os.environ.get("SGP_OUTPUT_DIR") or os.path.join(get_project_root(), "runs")


def get_default_config_dir() -> str:
    """
    Get the directory holding the example experiment configs.

    Returns:
        str: Path to ``<project root>/config``
    """
    return os.path.join(get_project_root(), "config")
