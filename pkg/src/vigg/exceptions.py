"""
vigg | Copyright (c) The vigg developers
"""

class VigError(Exception):
    """
    Base class of every error raised by vigg.
    """


class InvalidTransform(VigError):
    """
    Raised when a rotation is not orthonormal with determinant +1,
    or when a matrix does not have the shape of a rigid transform.
    """


class DegenerateInput(VigError):
    """
    Raised by the rigid fit when there are fewer than three correspondences,
    the total weight is zero, or the points are collinear.
    The caller must reject the hypothesis.
    """


class InvalidVoxel(VigError):
    """
    Raised when the voxel size is not strictly positive.
    """


class EmptyCloud(VigError):
    """
    Raised when an operation needs at least one point.
    """


class MissingNormals(VigError):
    """
    Raised when a descriptor is requested for a cloud without normals.
    """


class DimMismatch(VigError):
    """
    Raised when two feature sets (or vectors) do not share a dimension,
    or when a feature set is not index-aligned with its cloud.
    """


class EmptyIndex(VigError):
    """
    Raised when querying the nearest neighbor of an empty index.
    """


class OutOfBounds(VigError):
    """
    Raised when a pixel lies outside of the image.
    """


class InvalidIntrinsics(VigError):
    """
    Raised when camera intrinsics are not physically valid.
    """


class NoValidHypothesis(VigError):
    """
    Raised when no visual clique produces a non-degenerate transform.
    The registration of this pair has failed.
    """


class NoCorrespondences(VigError):
    """
    Raised when a refinement iteration ends with an empty correspondence set.
    """


class InvalidSpec(VigError):
    """
    Raised when a synthetic scene specification is inconsistent.
    """


class InvalidConfig(VigError):
    """
    Raised when a configuration value is out of range or unknown.
    """


class EmptyResults(VigError):
    """
    Raised when metrics are requested over zero registration results.
    """


class FormatError(VigError):
    """
    Raised when an input file is malformed.
    The message names the file and, when known, the line or byte offset.
    """
