import sys
import logging

from config.settings import Settings
from cli.commands import run

# 配置日志
logging.basicConfig(level=Settings.LOG_LEVEL, format='%(asctime)s %(levelname)s %(name)s: %(message)s')


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
