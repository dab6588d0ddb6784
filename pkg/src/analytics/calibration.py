"""
Calibration Module

Maps fitted latent ODE parameters to physical (SI) quantities using the
per-phenomenon rules in config/calibration_rules.ini, and rescales fits that
were run under a mislabeled frame interval.
"""

import configparser
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple, Union

from src.analytics.gt_fit import G, accel_from_friction, corrected_length, friction_from_accel
from src.physics.base import (
    CalibrationError,
    DomainError,
    FamilyTag,
    OdeFamily,
    ParamVector,
    SchemaError,
)
from src.physics.ode_bank import time_orders
from src.utils import get_logger

logger = get_logger(__name__)

FORMULAS = ('identity', 'negate', 'inverse_ratio', 'scale', 'friction_from_accel', 'metadata')
PENDULUM_TAGS = (FamilyTag.NONLINEAR_PENDULUM, FamilyTag.SECOND_ORDER_LINEAR)

_TERM_PATTERN = re.compile(r'^(\w+)\(\s*(\w+)\s*(?:;\s*([^)]*))?\)\s*(?:\[([^\]]*)\])?\s*$')


@dataclass(frozen=True)
class CalibrationTerm:
    """One physical quantity computed from one latent parameter"""
    name: str
    formula: str
    source: str
    constants: Tuple[Tuple[str, float], ...] = ()
    units: str = ""

    def constant(self, key: str, default: Optional[float] = None) -> float:
        values = dict(self.constants)
        if key in values:
            return values[key]
        if default is None:
            raise CalibrationError(f"{self.name}: {self.formula} needs constant {key!r}")
        return default


@dataclass(frozen=True)
class CalibrationRule:
    """Conversion table of one phenomenon fitted with one family"""
    phenomenon: str
    family: FamilyTag
    terms: Tuple[CalibrationTerm, ...] = field(default_factory=tuple)

    def term(self, name: str) -> Optional[CalibrationTerm]:
        for term in self.terms:
            if term.name == name:
                return term
        return None


@dataclass(frozen=True)
class SIValue:
    name: str
    value: float
    units: str


def parse_term(name: str, text: str) -> CalibrationTerm:
    """Parse '<formula>(<source>[; k=v, ...]) [units]'."""
    match = _TERM_PATTERN.match(text.strip())
    if not match:
        raise SchemaError(f"cannot parse calibration entry {name} = {text!r}")
    formula, source, raw_constants, units = match.groups()
    if formula not in FORMULAS:
        raise SchemaError(f"{name}: unknown formula {formula!r}")
    constants = []
    for item in (raw_constants or '').split(','):
        if not item.strip():
            continue
        key, _, value = item.partition('=')
        try:
            constants.append((key.strip(), float(value)))
        except ValueError as e:
            raise SchemaError(f"{name}: constant {item.strip()!r} is not numeric") from e
    return CalibrationTerm(name, formula, source, tuple(constants), (units or '').strip())


def load_rules(path: Optional[Union[str, Path]] = None) -> Dict[Tuple[str, FamilyTag], CalibrationRule]:
    """
    Read the rules file.

    Returns:
        Rules keyed by (phenomenon, family tag)
    """
    if path is None:
        from config.settings import settings
        path = settings.calibration_file
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path, encoding='utf-8') as handle:
            parser.read_file(handle)
    except configparser.Error as e:
        raise SchemaError(f"{path}: {e}") from e

    rules: Dict[Tuple[str, FamilyTag], CalibrationRule] = {}
    for section in parser.sections():
        phenomenon = section.split('@', 1)[0]
        entries = dict(parser.items(section))
        try:
            family = FamilyTag(entries.pop('family'))
        except KeyError:
            raise SchemaError(f"{path}: section [{section}] has no family") from None
        except ValueError as e:
            raise SchemaError(f"{path}: section [{section}]: {e}") from e
        terms = tuple(parse_term(name, text) for name, text in entries.items())
        rules[(phenomenon, family)] = CalibrationRule(phenomenon, family, terms)
    logger.debug(f"Loaded {len(rules)} calibration rules from {path}")
    return rules


def rule_for(
    phenomenon: str,
    family: Union[OdeFamily, FamilyTag],
    rules: Optional[Mapping[Tuple[str, FamilyTag], CalibrationRule]] = None,
) -> CalibrationRule:
    """
    Rule of a phenomenon under a family.

    Raises:
        CalibrationError: If no rule is registered
    """
    tag = family.tag if isinstance(family, OdeFamily) else family
    rules = rules if rules is not None else load_rules()
    try:
        return rules[(phenomenon, tag)]
    except KeyError:
        raise CalibrationError(f"no calibration rule for {phenomenon} fitted as {tag.value}") from None


def _apply(term: CalibrationTerm, params: Mapping[str, float], metadata: Mapping[str, float]) -> float:
    if term.formula == 'metadata':
        if term.source not in metadata:
            raise CalibrationError(f"{term.name}: setting metadata has no {term.source!r}")
        return float(metadata[term.source])
    if term.source not in params:
        raise CalibrationError(f"{term.name}: fitted parameters have no {term.source!r}")
    value = params[term.source]

    if term.formula == 'identity':
        return value
    if term.formula == 'negate':
        return -value
    if term.formula == 'scale':
        return value * term.constant('factor')
    if term.formula == 'inverse_ratio':
        if value <= 0:
            raise CalibrationError(f"{term.name}: {term.source}={value:.6g} must be positive")
        return term.constant('g_true', G) / value
    if term.formula == 'friction_from_accel':
        if 'alpha_deg' not in metadata:
            raise CalibrationError(f"{term.name}: incline angle missing from setting metadata")
        try:
            return friction_from_accel(float(metadata['alpha_deg']), value, term.constant('g', G))
        except DomainError as e:
            raise CalibrationError(f"{term.name}: {e}") from e
    raise CalibrationError(f"{term.name}: unknown formula {term.formula!r}")


def latent_to_si(
    rule: CalibrationRule,
    fitted: ParamVector,
    period: Optional[float] = None,
    theta0: Optional[float] = None,
    metadata: Optional[Mapping[str, float]] = None,
) -> List[SIValue]:
    """
    Physical quantities of a fit.

    Args:
        rule: Calibration rule of the phenomenon
        fitted: Fitted latent parameters
        period: Optional measured period; pendulum rules then also report
            L_period = g (T / 2 pi)^2
        theta0: Release angle in radians; with period, adds the
            amplitude-corrected length
        metadata: Setting constants (incline angle, ...)

    Raises:
        CalibrationError: If a conversion is undefined (e.g. g/L <= 0)
    """
    if fitted.family.tag is not rule.family:
        raise CalibrationError(f"rule for {rule.family.value} applied to {fitted.family}")
    params = fitted.as_dict()
    metadata = metadata or {}
    values = [SIValue(term.name, _apply(term, params, metadata), term.units) for term in rule.terms]

    if period is not None and rule.family in PENDULUM_TAGS:
        length_term = rule.term('L')
        g_true = length_term.constant('g_true', G) if length_term else G
        try:
            lengths = corrected_length(period, theta0 if theta0 is not None else 0.0, g_true)
        except DomainError as e:
            raise CalibrationError(str(e)) from e
        values.append(SIValue('L_period', lengths.small_angle, 'm'))
        if theta0 is not None:
            values.append(SIValue('L_amplitude_corrected', lengths.corrected, 'm'))
    return values


def si_to_latent(
    rule: CalibrationRule,
    si: Mapping[str, float],
    template: ParamVector,
    metadata: Optional[Mapping[str, float]] = None,
) -> ParamVector:
    """
    Invert a rule: latent parameters that reproduce the given SI values.

    Parameters not named by any rule term keep their template values.
    """
    metadata = metadata or {}
    values = template.as_dict()
    for term in rule.terms:
        if term.name not in si or term.formula == 'metadata':
            continue
        target = si[term.name]
        if term.formula == 'identity':
            latent = target
        elif term.formula == 'negate':
            latent = -target
        elif term.formula == 'scale':
            latent = target / term.constant('factor')
        elif term.formula == 'inverse_ratio':
            if target <= 0:
                raise CalibrationError(f"{term.name} must be positive to invert")
            latent = term.constant('g_true', G) / target
        elif term.formula == 'friction_from_accel':
            latent = accel_from_friction(float(metadata['alpha_deg']), target, term.constant('g', G))
        else:
            raise CalibrationError(f"{term.name}: {term.formula} is not invertible")
        values[term.source] = latent
    return template.replace([values[name] for name in template.family.param_names])


def timestep_sensitivity(
    rule: Optional[CalibrationRule], fitted: ParamVector, dt_assumed: float, dt_true: float
) -> ParamVector:
    """
    Rescale a fit run under a wrong frame interval.

    A parameter carrying inverse time to the power q is multiplied by
    (dt_assumed / dt_true) ** q; stiffness-like parameters scale with the
    square of the ratio and damping-like ones linearly. The rule, when
    given, must belong to the fitted family.
    """
    if rule is not None and rule.family is not fitted.family.tag:
        raise CalibrationError(f"rule for {rule.family.value} applied to {fitted.family}")
    if dt_assumed <= 0 or dt_true <= 0:
        raise DomainError("frame intervals must be positive")
    ratio = dt_assumed / dt_true
    orders = time_orders(fitted.family)
    rescaled = [value * ratio ** order for value, order in zip(fitted.values, orders)]
    logger.debug(f"Rescaled {fitted.family} by dt ratio {ratio:.6g}")
    return fitted.replace(rescaled)
