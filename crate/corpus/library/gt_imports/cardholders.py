# Import block of the reference Python implementation of Cardholders.
from flask import Flask, jsonify, request
import pymongo
from bson import ObjectId
from bson.errors import InvalidId
import requests
from datetime import date, datetime
import os
