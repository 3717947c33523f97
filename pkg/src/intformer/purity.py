"""Instrumentation proving the quantized path never touches floating point.

A :class:`FloatOpMonitor` is a context manager.  While active:

* arrays wrapped with :func:`traced` report every ufunc / array-function
  call they take part in, and every derived array (views, ``astype``...);
  any float or complex operand or result is logged as a float op;
* functions decorated with :func:`integer_kernel` have their arguments and
  results scanned (arrays, Python numbers, dataclass plans) for floats.
  Dataclass fields whose metadata is :data:`OFFLINE` hold scale metadata
  fixed before inference and are skipped.

Outside a monitor both hooks are no-ops.
"""

from __future__ import annotations

import contextvars
import dataclasses
import functools
import numbers

import numpy as np

_active: contextvars.ContextVar["FloatOpMonitor | None"] = contextvars.ContextVar(
    "float_op_monitor", default=None
)


class FloatOpMonitor:
    def __init__(self):
        self.float_ops: list[str] = []
        self.int_ops = 0
        self.kernel_calls: list[str] = []
        self._token = None

    def __enter__(self):
        self._token = _active.set(self)
        return self

    def __exit__(self, *exc):
        _active.reset(self._token)
        return False

    @property
    def clean(self) -> bool:
        return not self.float_ops

    def _record(self, where: str, dtypes) -> None:
        if any(_is_float_dtype(d) for d in dtypes):
            self.float_ops.append(f"{where}: {', '.join(str(d) for d in dtypes)}")
        else:
            self.int_ops += 1


def _is_float_dtype(dt) -> bool:
    return np.issubdtype(dt, np.floating) or np.issubdtype(dt, np.complexfloating)


def _scalar_dtype(v):
    if isinstance(v, (bool, np.bool_)):
        return np.dtype(bool)
    if isinstance(v, numbers.Integral):
        return np.dtype(np.int64)
    if isinstance(v, numbers.Real):
        return np.dtype(np.float64)
    if isinstance(v, numbers.Complex):
        return np.dtype(np.complex128)
    return None


def _collect_dtypes(obj, out, depth=0):
    if depth > 4:
        return
    if isinstance(obj, np.ndarray):
        out.append(obj.dtype)
    elif isinstance(obj, np.generic):
        out.append(obj.dtype)
    elif isinstance(obj, (list, tuple)):
        for o in obj:
            _collect_dtypes(o, out, depth + 1)
    elif isinstance(obj, dict):
        for o in obj.values():
            _collect_dtypes(o, out, depth + 1)
    else:
        d = _scalar_dtype(obj)
        if d is not None:
            out.append(d)


class TracedArray(np.ndarray):
    """ndarray subclass that reports its operations to the active monitor."""

    def __array_finalize__(self, obj):
        mon = _active.get()
        if mon is not None and obj is not None and _is_float_dtype(self.dtype):
            mon.float_ops.append(f"derived array of dtype {self.dtype}")

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        args = [_unwrap(i) for i in inputs]
        if "out" in kwargs:
            kwargs["out"] = tuple(_unwrap(o) for o in kwargs["out"])
        result = getattr(ufunc, method)(*args, **kwargs)
        mon = _active.get()
        if mon is not None:
            dts: list = []
            _collect_dtypes(args, dts)
            _collect_dtypes(result, dts)
            mon._record(f"ufunc {ufunc.__name__}.{method}", dts)
        return _wrap(result)

    def __array_function__(self, func, types, args, kwargs):
        uargs = _unwrap_tree(args)
        ukwargs = _unwrap_tree(kwargs)
        result = func(*uargs, **ukwargs)
        mon = _active.get()
        if mon is not None:
            dts: list = []
            _collect_dtypes(uargs, dts)
            _collect_dtypes(result, dts)
            mon._record(f"function {func.__name__}", dts)
        return _wrap(result)


def _unwrap(a):
    return a.view(np.ndarray) if isinstance(a, TracedArray) else a


def _unwrap_tree(obj):
    if isinstance(obj, TracedArray):
        return obj.view(np.ndarray)
    if isinstance(obj, tuple):
        return tuple(_unwrap_tree(o) for o in obj)
    if isinstance(obj, list):
        return [_unwrap_tree(o) for o in obj]
    if isinstance(obj, dict):
        return {k: _unwrap_tree(v) for k, v in obj.items()}
    return obj


def _wrap(result):
    if isinstance(result, np.ndarray) and not isinstance(result, TracedArray):
        return result.view(TracedArray)
    if isinstance(result, tuple):
        return tuple(_wrap(r) for r in result)
    if isinstance(result, list):
        return [_wrap(r) for r in result]
    return result


def traced(a) -> np.ndarray:
    """View ``a`` as a :class:`TracedArray` when a monitor is active."""
    if _active.get() is None:
        return a
    return np.asarray(a).view(TracedArray)


def untraced(a):
    return a.view(np.ndarray) if isinstance(a, TracedArray) else a


OFFLINE = {"offline": True}


def _plan_values(obj):
    # fields tagged OFFLINE are scale metadata computed before inference
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return [
            getattr(obj, f.name)
            for f in dataclasses.fields(obj)
            if not f.metadata.get("offline")
        ]
    return [obj]


def integer_kernel(fn):
    """Mark ``fn`` as an integer-only runtime entry point.

    Under an active monitor every argument (including dataclass plan fields)
    and every returned value is checked for floating-point content.
    """

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        mon = _active.get()
        if mon is None:
            return fn(*args, **kwargs)
        mon.kernel_calls.append(fn.__name__)
        dts: list = []
        for a in list(args) + list(kwargs.values()):
            for v in _plan_values(a):
                _collect_dtypes(v, dts)
        mon._record(f"enter {fn.__name__}", dts)
        result = fn(*args, **kwargs)
        dts = []
        for v in (result if isinstance(result, tuple) else (result,)):
            for w in _plan_values(v):
                _collect_dtypes(w, dts)
        mon._record(f"exit {fn.__name__}", dts)
        return result

    return wrapper
