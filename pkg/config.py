import logging
import os

from dotenv import dotenv_values, load_dotenv

from utils.errors import UsageError

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)

# key -> default; the default's type is the setting's type
DEFAULTS = {
    # ==================== RUN ====================
    'SEED': 0,
    'WORKERS': 0,  # 0 = every available core

    # ==================== GRADIENT BOOSTED TREES ====================
    'GBT_NUM_TREES': 67,
    'GBT_MAX_LEAF_NODES': 10,
    'GBT_SHRINKAGE': 0.1,
    'GBT_MIN_SAMPLES_PER_LEAF': 20,
    'GBT_FEATURE_SUBSAMPLE': 1.0,

    # ==================== LABELING ====================
    'MPL_D_PLUS': 1.0,
    'MPL_D_MINUS': -1.0,

    # ==================== LEARNING TO LABEL ====================
    'LTL_L2_LAMBDA': 0.01,
    'LTL_MAX_ITERATIONS': 500,
    'LTL_GRADIENT_TOLERANCE': 1e-8,
    'LTL_MIN_QPVS': 5,

    # ==================== EVALUATION ====================
    'CV_NUM_FOLDS': 5,
    'CV_OUT_OF_QUERY': True,  # featurize training rows without their own query's statistics
    'FEATURE_SMOOTHING': 1.0,

    # ==================== SYNTHETIC WORLD ====================
    'SYNTH_NUM_QUERIES': 200,
    'SYNTH_NUM_CARD_TYPES': 12,
    'SYNTH_NUM_SESSIONS': 20000,
    'SYNTH_POOL_SIZE': 6,
    'SYNTH_RELEVANCE_CONCENTRATION': 4.0,
    'SYNTH_REFORMULATION_STEEPNESS': 8.0,
    'SYNTH_SATISFACTION_THRESHOLD': 0.85,
    'SYNTH_P_IDEAL': 0.3,
    'SYNTH_MAX_CHAIN_LENGTH': 3,
    'SYNTH_ZIPF_EXPONENT': 1.1,
    'SYNTH_JUDGMENT_QUERIES': 50,
    'SYNTH_JUDGMENT_NOISE': 0.15,

    # ==================== LOGGING ====================
    'LOG_LEVEL': 'INFO',
    'LOG_FILE': '',  # empty = no log file
    'LOG_MAX_SIZE': 10485760,  # 10MB
    'LOG_BACKUP_COUNT': 5,
}


def coerce(key, raw):
    """
    Convert a text value to the type of the key's default

    Raises:
        UsageError: unknown key or unparseable value
    """
    if key not in DEFAULTS:
        raise UsageError(f"unknown setting {key!r}")
    default = DEFAULTS[key]
    if raw is None:
        raise UsageError(f"setting {key!r} has no value")
    if not isinstance(raw, str):
        return raw
    try:
        if isinstance(default, bool):
            lowered = raw.strip().lower()
            if lowered not in ('true', 'false', '1', '0', 'yes', 'no'):
                raise ValueError(raw)
            return lowered in ('true', '1', 'yes')
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise UsageError(f"setting {key}={raw!r} is not a valid {type(default).__name__}") from None
    return raw


class Config:
    """
    Hard defaults as class attributes

    settings() layers the environment (and a .env file) over them.
    """

    BASE_DIR = os.path.abspath(os.path.dirname(__file__))


for _key, _default in DEFAULTS.items():
    setattr(Config, _key, _default)


def environment_settings():
    """
    Typed values of the settings present in the environment

    Raises:
        UsageError: a value that does not parse
    """
    return {key: coerce(key, os.environ[key]) for key in DEFAULTS if key in os.environ}


def load_config_file(path):
    """
    Read a KEY=value settings file

    Returns:
        dict of typed overrides

    Raises:
        UsageError: missing file, unknown key or bad value
    """
    if not os.path.isfile(path):
        raise UsageError(f"config file not found: {path}")
    overrides = {key: coerce(key, raw) for key, raw in dotenv_values(path).items()}
    logger.debug(f"✅ Loaded {len(overrides)} settings from {path}")
    return overrides


def settings(overrides=None):
    """Effective settings: defaults, then the environment, then overrides on top"""
    result = {key: getattr(Config, key) for key in DEFAULTS}
    result.update(environment_settings())
    result.update(overrides or {})
    return result


def get_gbt_config(values=None):
    values = values or settings()
    return {
        'num_trees': values['GBT_NUM_TREES'],
        'max_leaf_nodes': values['GBT_MAX_LEAF_NODES'],
        'shrinkage': values['GBT_SHRINKAGE'],
        'min_samples_per_leaf': values['GBT_MIN_SAMPLES_PER_LEAF'],
        'feature_subsample': values['GBT_FEATURE_SUBSAMPLE'],
        'seed': values['SEED'],
    }


def get_movement_config(values=None):
    values = values or settings()
    return {'d_plus': values['MPL_D_PLUS'], 'd_minus': values['MPL_D_MINUS']}


def get_fit_config(values=None):
    values = values or settings()
    return {
        'l2_lambda': values['LTL_L2_LAMBDA'],
        'max_iterations': values['LTL_MAX_ITERATIONS'],
        'gradient_tolerance': values['LTL_GRADIENT_TOLERANCE'],
        'min_qpvs': values['LTL_MIN_QPVS'],
    }


def get_cv_config(values=None):
    values = values or settings()
    return {
        'num_folds': values['CV_NUM_FOLDS'],
        'seed': values['SEED'],
        'out_of_query': values['CV_OUT_OF_QUERY'],
    }


def get_world_config(values=None):
    values = values or settings()
    return {
        'num_queries': values['SYNTH_NUM_QUERIES'],
        'num_card_types': values['SYNTH_NUM_CARD_TYPES'],
        'num_sessions': values['SYNTH_NUM_SESSIONS'],
        'pool_size': values['SYNTH_POOL_SIZE'],
        'relevance_concentration': values['SYNTH_RELEVANCE_CONCENTRATION'],
        'reformulation_steepness': values['SYNTH_REFORMULATION_STEEPNESS'],
        'satisfaction_threshold': values['SYNTH_SATISFACTION_THRESHOLD'],
        'p_ideal': values['SYNTH_P_IDEAL'],
        'max_chain_length': values['SYNTH_MAX_CHAIN_LENGTH'],
        'zipf_exponent': values['SYNTH_ZIPF_EXPONENT'],
        'seed': values['SEED'],
    }


def validate_config(values=None):
    """
    Check ranges that the module dataclasses would otherwise reject late

    Returns:
        list of warning strings, empty when everything is in range
    """
    values = values or settings()
    warnings = []

    if values['GBT_NUM_TREES'] < 0:
        warnings.append("GBT_NUM_TREES must be >= 0")
    if values['GBT_MAX_LEAF_NODES'] < 2:
        warnings.append("GBT_MAX_LEAF_NODES must be >= 2")
    if not 0 < values['GBT_SHRINKAGE'] <= 1:
        warnings.append("GBT_SHRINKAGE must be in (0, 1]")
    if values['CV_NUM_FOLDS'] < 2:
        warnings.append("CV_NUM_FOLDS must be >= 2")
    if values['LTL_L2_LAMBDA'] < 0:
        warnings.append("LTL_L2_LAMBDA must be >= 0")
    if values['MPL_D_PLUS'] <= 0 or values['MPL_D_MINUS'] >= 0:
        warnings.append("MPL_D_PLUS must be > 0 and MPL_D_MINUS < 0")
    if values['FEATURE_SMOOTHING'] < 0:
        warnings.append("FEATURE_SMOOTHING must be >= 0")
    if values['LOG_LEVEL'].upper() not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
        warnings.append(f"LOG_LEVEL {values['LOG_LEVEL']!r} is not a logging level")

    for warning in warnings:
        logger.warning(f"⚠️ {warning}")
    return warnings
