from fastapi import APIRouter, HTTPException

from app.models.pydantic_models import StructureDefinition, APIResponse
from app.services.almost_complex import structure_bound, structure_from_definition, validate
from app.utils.errors import StructureRejectedError

router = APIRouter()


@router.post("/validate", response_model=APIResponse)
async def validate_structure(definition: StructureDefinition):
    """Check a polynomial structure definition and report its deviations"""
    try:
        J = structure_from_definition(definition)
        report = validate(J)
        report.mu_bound = structure_bound(J)
        return APIResponse(
            success=True,
            data=report,
            message="Structure accepted"
        )

    except StructureRejectedError as e:
        raise HTTPException(status_code=400, detail=e.to_payload())
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Error validating structure: {str(e)}")
