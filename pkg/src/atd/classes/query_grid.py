import numpy as np

from atd.exc import DimensionMismatchError, UnknownLocationError


class QueryGrid:
    """
    Partition of a rows x cols grid into square query blocks.

    Locations are numbered row-major over blocks; a location maps to the row-major indices of the
    cells it covers. With block = 1 a location is a cell.
    """

    def __init__(self, rows: int, cols: int, block: int = 1):
        if rows < 1 or cols < 1 or block < 1:
            raise DimensionMismatchError(f"invalid grid {rows}x{cols} with block {block}")
        if rows % block or cols % block:
            raise DimensionMismatchError(f"block {block} does not divide grid {rows}x{cols}")

        self.__rows: int = rows
        self.__cols: int = cols
        self.__block: int = block
        self.__block_rows: int = rows // block
        self.__block_cols: int = cols // block

        br, bc = np.divmod(np.arange(self.__block_rows * self.__block_cols), self.__block_cols)
        dr, dc = np.divmod(np.arange(block * block), block)
        cell_rows = br[:, None] * block + dr[None, :]
        cell_cols = bc[:, None] * block + dc[None, :]
        self.__coordinates: np.ndarray = cell_rows * cols + cell_cols
        self.__coordinates.setflags(write=False)

    def __str__(self) -> str:
        return f"QueryGrid(rows={self.__rows}, cols={self.__cols}, block={self.__block})"

    def __repr__(self) -> str:
        return self.__str__()

    def get_rows(self) -> int:
        return self.__rows

    def get_cols(self) -> int:
        return self.__cols

    def get_block(self) -> int:
        return self.__block

    def get_n_cells(self) -> int:
        return self.__rows * self.__cols

    def get_n_locations(self) -> int:
        return self.__block_rows * self.__block_cols

    def get_patch_size(self) -> int:
        return self.__block * self.__block

    def get_coordinates(self) -> np.ndarray:
        """
        :return: L x block^2 array of cell indices, one row per location
        """
        return self.__coordinates

    def check_location(self, location: int) -> None:
        if not 0 <= location < self.get_n_locations():
            raise UnknownLocationError(
                f"location {location} outside 0..{self.get_n_locations() - 1}"
            )

    def cells(self, location: int) -> np.ndarray:
        self.check_location(location)
        return self.__coordinates[location]

    def neighbors(self, location: int, radius: int) -> np.ndarray:
        """
        Locations within Chebyshev distance radius of location, itself included.
        """
        self.check_location(location)
        r, c = divmod(location, self.__block_cols)
        rows = np.arange(max(0, r - radius), min(self.__block_rows, r + radius + 1))
        cols = np.arange(max(0, c - radius), min(self.__block_cols, c + radius + 1))

        return (rows[:, None] * self.__block_cols + cols[None, :]).reshape(-1)

    def aggregate(self, values) -> np.ndarray:
        """
        Mean of a per-cell vector over each location's block.
        """
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if values.size != self.get_n_cells():
            raise DimensionMismatchError(f"{values.size} values for {self.get_n_cells()} cells")

        return values[self.__coordinates].mean(axis=1)
