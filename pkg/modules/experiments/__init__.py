from .runner import Cell, plan_cells, run_cell, run_experiment, write_reports
from .selfcheck import GROUPS, random_warp_case, run_selfcheck
