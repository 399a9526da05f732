import os
import shutil
import logging

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


def setup_project():
    """Set up the project directory structure and configuration files."""
    logger.info("Setting up curvcone...")

    # Create necessary directories
    directories = ["logs", "config", "reports"]
    for directory in directories:
        if not os.path.exists(directory):
            os.makedirs(directory)
            logger.info(f"Created directory: {directory}")

    # Create .env file if it doesn't exist
    if not os.path.exists(".env"):
        if os.path.exists("config/config.example.env"):
            shutil.copy("config/config.example.env", ".env")
            logger.info("Created .env file from example template")
        else:
            logger.error("config.example.env not found, cannot create .env file")
            return False

    logger.info("Setup complete! Next steps:")
    logger.info("1. Adjust .env (threads, seed, report timezone, optional LangFuse keys)")
    logger.info("2. Run 'python main.py oracle' to cross-check the curvature formulas")
    logger.info("3. Run 'python main.py conformal --chart sphere --n 4 --condition scal --out reports/conformal.json'")

    return True


if __name__ == "__main__":
    setup_project()
