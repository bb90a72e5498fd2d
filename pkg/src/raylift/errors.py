"""Exception hierarchy shared by every raylift module."""


class RayLiftError(Exception):
    """Base class; the CLI maps these to exit code 1."""


class GeometryError(RayLiftError):
    pass


class BehindCamera(GeometryError):
    def __init__(self, joint_index, depth):
        self.joint_index = int(joint_index)
        self.depth = float(depth)
        super().__init__(f"joint {self.joint_index} has camera depth {self.depth:.6g} <= 1e-6")


class NegativeHeight(GeometryError):
    def __init__(self, height):
        self.height = float(height)
        super().__init__(f"camera centre lies below the ground plane (z = {self.height:.6g} m)")


class RollTooLarge(GeometryError):
    def __init__(self, roll, limit):
        self.roll = float(roll)
        super().__init__(f"camera roll {self.roll:.4f} rad exceeds the {limit} rad limit")


class FrameMismatch(GeometryError):
    def __init__(self, expected, got):
        super().__init__(f"expected frame {expected}, got {got}")


class InvalidCamera(GeometryError):
    pass


class RayParallel(GeometryError):
    pass


class JointSetMismatch(RayLiftError):
    pass


class UnknownJointSet(RayLiftError):
    pass


class EmptyGrid(RayLiftError):
    pass


class UnknownAxis(RayLiftError):
    pass


class ShapeMismatch(RayLiftError):
    pass


class ModeMismatch(RayLiftError):
    pass


class NonFiniteLoss(RayLiftError):
    def __init__(self, epoch, batch):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
