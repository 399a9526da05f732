import os
import sys
import logging
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Create logs directory before the file handler opens it
os.makedirs("logs", exist_ok=True)

# Configure logging
logging.basicConfig(
    level=getattr(logging, os.getenv('LOG_LEVEL', 'INFO').upper(), logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.FileHandler('logs/curvcone.log'),
        logging.StreamHandler()
    ]
)
logger = logging.getLogger(__name__)

from src.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
